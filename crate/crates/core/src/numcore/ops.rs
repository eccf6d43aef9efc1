//! Elementwise and row-wise kernels with their backward rules.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` where `x > 0`; the subgradient at zero is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    x.same_shape(upstream)?;
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// `log softmax` of one row.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&l| l - lse).collect()
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::Index { index: target, len: logits.len() });
    }
    let mut grad = softmax(logits);
    let logp = log_softmax(logits);
    grad[target] -= T::one();
    Ok((-logp[target], grad))
}

/// Row-wise cross-entropy over a `[rows x V]` logit matrix.
///
/// Returns the mean loss and the gradient of that mean with respect to the
/// logits. Also reports how many rows had their argmax on the target.
pub fn batch_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>, usize)> {
    let (rows, v) = logits.dims2();
    if rows != targets.len() {
        return Err(Error::dim(format!("{rows} logit rows for {} targets", targets.len())));
    }
    let scale = T::one() / T::of(rows as f64);
    let mut grad = Tensor::zeros(&[rows, v]);
    let mut total = T::zero();
    let mut hits = 0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let (loss, g) = softmax_cross_entropy(row, t)?;
        if argmax(row) == t {
            hits += 1;
        }
        total += loss;
        grad.row_mut(r).iter_mut().zip(g).for_each(|(o, gi)| *o = gi * scale);
    }
    Ok((total * scale, grad, hits))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
