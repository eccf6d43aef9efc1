//! Finite-difference gradient cases; each returns its worst relative error.

use mbridge::captioner::{CaptionModel, CaptionerDims};
use mbridge::mtm::{modality_loss_batch, pair_loss, ModalityLossKind, Mtm, RegionFeatures};
use mbridge::numcore::ops::softmax_cross_entropy;
use mbridge::numcore::{grad_check, LstmParams, Module, Tensor};
use mbridge::textae::{AeDims, AutoEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], scale: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, scale, r)
}

fn set_params<M: Module<f64>>(model: &mut M, values: &[Tensor<f64>]) {
    for (p, v) in model.params_mut().into_iter().zip(values) {
        p.value = v.clone();
    }
}

fn values<M: Module<f64>>(model: &M) -> Vec<Tensor<f64>> {
    model.params().iter().map(|p| p.value.clone()).collect()
}

fn grads<M: Module<f64>>(model: &M) -> Vec<Tensor<f64>> {
    model.params().iter().map(|p| p.grad.clone()).collect()
}

pub fn lstm_cell() -> f64 {
    let mut r = rng(1);
    let mut cell = LstmParams::<f64>::init("l", 3, 4, 0.8, &mut r);
    let x = random(&[2, 3], 1.0, &mut r);
    let h = random(&[2, 4], 1.0, &mut r);
    let c = random(&[2, 4], 1.0, &mut r);
    // objective: weighted sum of h and c so both upstream paths are used
    let wh = random(&[2, 4], 1.0, &mut r);
    let wc = random(&[2, 4], 1.0, &mut r);
    let objective = |cell: &LstmParams<f64>, x: &Tensor<f64>, h: &Tensor<f64>, c: &Tensor<f64>| {
        let (h2, c2, _) = cell.forward(x, h, c).unwrap();
        let a: f64 = h2.data().iter().zip(wh.data()).map(|(a, b)| a * b).sum();
        let b: f64 = c2.data().iter().zip(wc.data()).map(|(a, b)| a * b).sum();
        a + b
    };
    let (_, _, cache) = cell.forward(&x, &h, &c).unwrap();
    let (dx, dh, dc) = cell.backward(&cache, &wh, &wc);
    let mut inputs: Vec<Tensor<f64>> = cell.params().iter().map(|p| p.value.clone()).collect();
    let mut analytic: Vec<Tensor<f64>> = cell.params().iter().map(|p| p.grad.clone()).collect();
    inputs.extend([x, h, c]);
    analytic.extend([dx, dh, dc]);
    let mut probe = cell.clone();
    let err = grad_check(
        |v| {
            for (p, t) in probe.params_mut().into_iter().zip(v) {
                p.value = t.clone();
            }
            objective(&probe, &v[3], &v[4], &v[5])
        },
        &inputs,
        &analytic,
        30,
        2,
    );
    err
}

pub fn cross_entropy() -> f64 {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for target in 0..5 {
        let logits = random(&[5], 3.0, &mut r);
        let (_, g) = softmax_cross_entropy(logits.data(), target).unwrap();
        let err = grad_check(
            |v| softmax_cross_entropy(v[0].data(), target).unwrap().0,
            &[logits],
            &[Tensor::vector(g)],
            5,
            4,
        );
        worst = worst.max(err);
    }
    worst
}

pub fn projector() -> f64 {
    let mut r = rng(5);
    let mut m = Mtm::<f64>::init(6, 4, 0.7, &mut r);
    let pooled = random(&[3, 6], 1.0, &mut r);
    let w = random(&[3, 4], 1.0, &mut r);
    let (_, trace) = m.forward(&pooled).unwrap();
    m.backward(&trace, &w).unwrap();
    let mut probe = m.clone();
    let err = grad_check(
        |v| {
            set_params(&mut probe, v);
            let (u, _) = probe.forward(&pooled).unwrap();
            u.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        },
        &values(&m),
        &grads(&m),
        30,
        6,
    );
    err
}

/// Worst error per loss kind for single (prediction, target) pairs.
pub fn modality_losses_per_pair() -> Vec<(ModalityLossKind, f64)> {
    let mut r = rng(7);
    let mut out = Vec::new();
    for kind in ModalityLossKind::ALL.into_iter().filter(|k| *k != ModalityLossKind::Mmd) {
        let mut worst = 0.0f64;
        for trial in 0..5 {
            let pred = random(&[6], 1.0, &mut r);
            let target = random(&[6], 1.0, &mut r);
            let (_, g) = pair_loss(kind, pred.data(), target.data()).unwrap();
            let err = grad_check(
                |v| pair_loss(kind, v[0].data(), target.data()).unwrap().0,
                &[pred],
                &[Tensor::vector(g)],
                6,
                trial,
            );
            worst = worst.max(err);
        }
        out.push((kind, worst));
    }
    out
}

pub fn modality_losses_batched() -> Vec<(ModalityLossKind, f64)> {
    let mut r = rng(8);
    let mut out = Vec::new();
    for kind in ModalityLossKind::ALL {
        let preds = random(&[4, 5], 1.0, &mut r);
        let targets = random(&[4, 5], 1.0, &mut r);
        let (_, g) = modality_loss_batch(kind, &preds, &targets).unwrap();
        let err = grad_check(|v| modality_loss_batch(kind, &v[0], &targets).unwrap().0, &[preds], &[g], 20, 9);
        out.push((kind, err));
    }
    out
}

fn toy_scenes(r: &mut ChaCha8Rng, d_v: usize) -> (Vec<RegionFeatures<f64>>, Vec<Vec<usize>>) {
    let regions: Vec<RegionFeatures<f64>> = (0..3)
        .map(|i| {
            let rows: Vec<Vec<f64>> = (0..i + 1).map(|_| (0..d_v).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            RegionFeatures::from_rows(&rows).unwrap()
        })
        .collect();
    let captions = vec![vec![4, 5, 6], vec![6, 4, 4], vec![5, 5, 7]];
    (regions, captions)
}

pub fn captioner(use_mtm: bool, d_att: usize, kind: ModalityLossKind, seed: u64) -> f64 {
    let mut r = rng(seed);
    let dims = CaptionerDims { vocab_size: 8, d_emb: 3, d_h: 4, d_v: 5, d_e: 4, use_mtm, d_att, max_len: 6 };
    let mut model = CaptionModel::<f64>::init(dims, seed, 0.08).unwrap();
    for p in model.params_mut() {
        p.value.scale(8.0);
    }
    let (regions, captions) = toy_scenes(&mut r, 5);
    let region_refs: Vec<&RegionFeatures<f64>> = regions.iter().collect();
    let cap_refs: Vec<&[usize]> = captions.iter().map(|c| c.as_slice()).collect();
    let codes = random(&[3, 4], 0.9, &mut r);
    model.zero_grad();
    let (_, trace) = model.forward(&region_refs, &cap_refs, Some(&codes), kind).unwrap();
    model.backward(&trace).unwrap();
    let mut probe = model.clone();
    grad_check(
        |v| {
            set_params(&mut probe, v);
            probe.forward(&region_refs, &cap_refs, Some(&codes), kind).unwrap().0.total
        },
        &values(&model),
        &grads(&model),
        15,
        seed,
    )
}

pub fn autoencoder() -> f64 {
    let dims = AeDims { vocab_size: 7, d_emb: 3, d_e: 4, max_len: 6 };
    let mut model = AutoEncoder::<f64>::with_init(dims, 5, 0.08).unwrap();
    // larger weights so gradients are not vanishingly small
    for p in model.params_mut() {
        p.value.scale(6.0);
    }
    let batch: Vec<Vec<usize>> = vec![vec![4, 5, 6], vec![6, 4, 4]];
    let refs: Vec<&[usize]> = batch.iter().map(|s| s.as_slice()).collect();
    model.zero_grad();
    model.accumulate_gradients(&refs).unwrap();
    let mut probe = model.clone();
    grad_check(
        |vals| {
            set_params(&mut probe, vals);
            probe.batch_loss(&refs).unwrap().loss
        },
        &values(&model),
        &grads(&model),
        20,
        11,
    )
}

/// Every case with a readable name.
pub fn all() -> Vec<(String, f64)> {
    let mut out = vec![
        ("lstm cell".to_string(), lstm_cell()),
        ("cross-entropy".to_string(), cross_entropy()),
        ("projector".to_string(), projector()),
    ];
    for (k, e) in modality_losses_per_pair() {
        out.push((format!("{k} loss (pair)"), e));
    }
    for (k, e) in modality_losses_batched() {
        out.push((format!("{k} loss (batch)"), e));
    }
    for (i, kind) in ModalityLossKind::ALL.into_iter().enumerate() {
        out.push((format!("captioner with attention, {kind}"), captioner(true, 3, kind, 20 + i as u64)));
    }
    out.push(("captioner without attention".to_string(), captioner(true, 0, ModalityLossKind::Mse, 30)));
    out.push(("captioner without transition".to_string(), captioner(false, 3, ModalityLossKind::Mse, 31)));
    out.push(("auto-encoder".to_string(), autoencoder()));
    out
}
