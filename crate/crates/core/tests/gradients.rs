mod support;

use mbridge::mtm::ModalityLossKind;
use support::gradcases::{self as cases, TOL};

#[test]
fn lstm_cell() {
    let err = cases::lstm_cell();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn cross_entropy() {
    let err = cases::cross_entropy();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn projector() {
    let err = cases::projector();
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn modality_losses_per_pair() {
    for (kind, err) in cases::modality_losses_per_pair() {
        assert!(err < TOL, "{kind} relative error {err}");
    }
}

#[test]
fn modality_losses_batched() {
    for (kind, err) in cases::modality_losses_batched() {
        assert!(err < TOL, "{kind} relative error {err}");
    }
}

#[test]
fn captioner_with_attention_and_each_modality_loss() {
    for (i, kind) in ModalityLossKind::ALL.into_iter().enumerate() {
        let err = cases::captioner(true, 3, kind, 20 + i as u64);
        assert!(err < TOL, "{kind} relative error {err}");
    }
}

#[test]
fn captioner_without_attention() {
    let err = cases::captioner(true, 0, ModalityLossKind::Mse, 30);
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn captioner_baseline_without_transition() {
    let err = cases::captioner(false, 3, ModalityLossKind::Mse, 31);
    assert!(err < TOL, "relative error {err}");
}

#[test]
fn autoencoder_full_backward() {
    let err = cases::autoencoder();
    assert!(err < TOL, "relative error {err}");
}
