use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences of an O(1)
/// objective carry round-off near 1e-11, so gradients far below this floor
/// cannot be resolved relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central finite differences.
///
/// `f` evaluates the scalar objective for a given set of input tensors.
/// For each tensor, up to `per_tensor` coordinates are drawn without
/// replacement (all of them when the tensor is smaller). Returns the maximum
/// of `|analytic - numeric| / max(REL_FLOOR, |analytic| + |numeric|)`.
pub fn grad_check<F>(mut f: F, inputs: &[Tensor<f64>], analytic: &[Tensor<f64>], per_tensor: usize, seed: u64) -> f64
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (t, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[t].shape(), "gradient shape for input {t}");
        let n = inputs[t].len();
        let coords: Vec<usize> = if n <= per_tensor { (0..n).collect() } else { sample(&mut rng, n, per_tensor).into_vec() };
        for i in coords {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + FD_STEP;
            let plus = f(&work);
            work[t].data_mut()[i] = orig - FD_STEP;
            let minus = f(&work);
            work[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
