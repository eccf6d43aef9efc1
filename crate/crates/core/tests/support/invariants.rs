//! Seeded invariant checks on random models; each returns a description of
//! the first violation.

use mbridge::captioner::{beam_search, greedy, Attention, CaptionModel, CaptionerDims};
use mbridge::mtm::{modality_loss_batch, ModalityLossKind, RegionFeatures};
use mbridge::numcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub const SUM_TOL: f64 = 1e-12;

fn regions(rng: &mut ChaCha8Rng, k: usize, d_v: usize, scale: f64) -> RegionFeatures<f64> {
    let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..d_v).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).collect();
    RegionFeatures::from_rows(&rows).unwrap()
}

fn random_dims(rng: &mut ChaCha8Rng, use_mtm: bool, attention: bool) -> CaptionerDims {
    CaptionerDims {
        vocab_size: rng.random_range(5..12),
        d_emb: rng.random_range(2..7),
        d_h: rng.random_range(2..9),
        d_v: rng.random_range(2..7),
        d_e: rng.random_range(2..7),
        use_mtm,
        d_att: if attention { rng.random_range(1..6) } else { 0 },
        max_len: rng.random_range(1..9),
    }
}

/// Every projected code `u'` is non-negative.
pub fn projection_is_nonnegative(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attention = rng.random_bool(0.5);
    let dims = random_dims(&mut rng, true, attention);
    let range = rng.random_range(0.05..2.0);
    let model = CaptionModel::<f64>::init(dims, seed, range).map_err(|e| e.to_string())?;
    let b = rng.random_range(1..5);
    let batch: Vec<RegionFeatures<f64>> = (0..b)
        .map(|_| {
            let k = rng.random_range(1..6);
            regions(&mut rng, k, dims.d_v, 5.0)
        })
        .collect();
    let refs: Vec<&RegionFeatures<f64>> = batch.iter().collect();
    let u = model.transit(&refs).map_err(|e| e.to_string())?;
    match u.data().iter().find(|&&x| !(x >= 0.0)) {
        Some(x) => Err(format!("seed {seed}: u' has entry {x}")),
        None => Ok(()),
    }
}

/// Attention weights are non-negative and sum to one; permuting the regions
/// permutes the weights and leaves the context unchanged.
pub fn attention_is_a_distribution(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_h, d_v, d_a) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..8));
    let k = rng.random_range(1..10);
    let att = Attention::<f64>::init(d_h, d_v, d_a, rng.random_range(0.05..3.0), &mut rng);
    let h: Vec<f64> = (0..d_h).map(|_| rng.random_range(-3.0..3.0)).collect();
    let v = regions(&mut rng, k, d_v, 4.0);
    let (ctx, w) = att.attend(&h, &v).map_err(|e| e.to_string())?;
    let sum: f64 = w.data().iter().sum();
    if (sum - 1.0).abs() > SUM_TOL || w.data().iter().any(|&x| !(x >= 0.0)) {
        return Err(format!("seed {seed}: weights {:?} sum to {sum}", w.data()));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    perm.reverse();
    perm.rotate_left(rng.random_range(0..k));
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| v.matrix().row(i).to_vec()).collect();
    let (ctx2, w2) = att.attend(&h, &RegionFeatures::from_rows(&rows).unwrap()).map_err(|e| e.to_string())?;
    for (j, &i) in perm.iter().enumerate() {
        if (w2.data()[j] - w.data()[i]).abs() > SUM_TOL {
            return Err(format!("seed {seed}: weight of region {i} moved from {} to {}", w.data()[i], w2.data()[j]));
        }
    }
    for (a, b) in ctx.data().iter().zip(ctx2.data()) {
        if (a - b).abs() > SUM_TOL * (1.0 + a.abs()) {
            return Err(format!("seed {seed}: context changed under permutation, {a} vs {b}"));
        }
    }
    Ok(())
}

/// Beam search of width 1 returns exactly the greedy caption.
pub fn beam_one_is_greedy(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (use_mtm, attention) = (rng.random_bool(0.7), rng.random_bool(0.7));
    let dims = random_dims(&mut rng, use_mtm, attention);
    let model = CaptionModel::<f64>::init(dims, seed, rng.random_range(0.05..3.0)).map_err(|e| e.to_string())?;
    let k = rng.random_range(1..6);
    let v = regions(&mut rng, k, dims.d_v, 2.0);
    let g = model.greedy_decode(&v).map_err(|e| e.to_string())?;
    let b = model.beam_decode(&v, 1).map_err(|e| e.to_string())?;
    if g != b {
        return Err(format!("seed {seed}: greedy {:?} vs beam {:?}", g.ids(), b.ids()));
    }
    Ok(())
}

/// Beam search never returns a caption scoring below the greedy one.
pub fn beam_dominates_greedy(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attention = rng.random_bool(0.7);
    let dims = random_dims(&mut rng, true, attention);
    let model = CaptionModel::<f64>::init(dims, seed, rng.random_range(0.05..3.0)).map_err(|e| e.to_string())?;
    let k = rng.random_range(1..6);
    let v = regions(&mut rng, k, dims.d_v, 2.0);
    let session = model.session(&v).map_err(|e| e.to_string())?;
    let g = greedy(&session).map_err(|e| e.to_string())?;
    for width in 2..5 {
        let b = beam_search(&session, width).map_err(|e| e.to_string())?;
        if b.score() < g.score() {
            return Err(format!("seed {seed} width {width}: beam {} below greedy {}", b.score(), g.score()));
        }
    }
    Ok(())
}

/// `total` is exactly `ce + modality`, the cross-entropy does not depend on
/// the modality loss kind, and the modality term equals the loss of the
/// projected codes against the references. A loss that rejects its input
/// (a zero-norm code under COS) must make the forward pass fail too.
pub fn loss_decomposes(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let use_mtm = rng.random_bool(0.8);
    let attention = rng.random_bool(0.7);
    let mut dims = random_dims(&mut rng, use_mtm, attention);
    dims.max_len = 8;
    let model = CaptionModel::<f64>::init(dims, seed, rng.random_range(0.05..1.0)).map_err(|e| e.to_string())?;
    let b = rng.random_range(2..5);
    let n = rng.random_range(1..8);
    let batch: Vec<RegionFeatures<f64>> = (0..b)
        .map(|_| {
            let k = rng.random_range(1..5);
            regions(&mut rng, k, dims.d_v, 2.0)
        })
        .collect();
    let caps: Vec<Vec<usize>> = (0..b).map(|_| (0..n).map(|_| rng.random_range(3..dims.vocab_size)).collect()).collect();
    let codes = Tensor::matrix(b, dims.d_e, (0..b * dims.d_e).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let refs: Vec<&RegionFeatures<f64>> = batch.iter().collect();
    let caps_ref: Vec<&[usize]> = caps.iter().map(Vec::as_slice).collect();
    let u = if use_mtm { Some(model.transit(&refs).map_err(|e| e.to_string())?) } else { None };
    let mut ce = None;
    for kind in ModalityLossKind::ALL {
        let expected = match &u {
            Some(u) => modality_loss_batch(kind, u, &codes).map(|r| r.0),
            None => Ok(0.0),
        };
        let got = model.forward(&refs, &caps_ref, use_mtm.then_some(&codes), kind);
        let (r, expected) = match (got, expected) {
            (Ok((r, _)), Ok(e)) => (r, e),
            (Err(_), Err(_)) => continue,
            (Ok(_), Err(e)) => return Err(format!("seed {seed} {kind}: forward succeeded where the loss fails ({e})")),
            (Err(e), Ok(_)) => return Err(format!("seed {seed} {kind}: {e}")),
        };
        if r.total != r.ce + r.modality {
            return Err(format!("seed {seed} {kind}: total {} != {} + {}", r.total, r.ce, r.modality));
        }
        if *ce.get_or_insert(r.ce) != r.ce {
            return Err(format!("seed {seed} {kind}: ce {} differs across loss kinds", r.ce));
        }
        if r.modality != expected {
            return Err(format!("seed {seed} {kind}: modality {} vs recomputed {expected}", r.modality));
        }
    }
    Ok(())
}
