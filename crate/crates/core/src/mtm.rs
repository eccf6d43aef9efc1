//! Modality transition: pool region features, project them into the
//! caption-code space, and score the projection against the frozen
//! auto-encoder code.
//!
//! ```text
//! v_g = mean_i V[i]
//! u'  = relu(W2 . (W1 . v_g + b1) + b2)
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::ops::{relu, relu_backward, softmax};
use crate::numcore::{Linear, Module, Parameter, Tensor};
use crate::scalar::Scalar;

/// Region feature matrix `[K x d_v]` with `K >= 1` and finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionFeatures<T>(Tensor<T>);

impl<T: Scalar> RegionFeatures<T> {
    pub fn new(matrix: Tensor<T>) -> Result<Self> {
        if matrix.shape().len() != 2 {
            return Err(Error::dim(format!("region features must be 2-D, got {:?}", matrix.shape())));
        }
        if !matrix.all_finite() {
            return Err(Error::input("non-finite region feature"));
        }
        Ok(Self(matrix))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::input("scene has no regions (K = 0)"));
        }
        let data: Vec<Vec<T>> = rows.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect();
        Self::new(Tensor::from_rows(&data)?)
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn regions(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

/// Mean over regions, shape `[d_v]`.
pub fn pool_regions<T: Scalar>(v: &RegionFeatures<T>) -> Tensor<T> {
    let (k, d) = v.0.dims2();
    let mut out = vec![T::zero(); d];
    for i in 0..k {
        out.iter_mut().zip(v.0.row(i)).for_each(|(o, &x)| *o += x);
    }
    let inv = T::one() / T::of(k as f64);
    out.iter_mut().for_each(|o| *o *= inv);
    Tensor::vector(out)
}

/// Two affine layers with a ReLU on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mtm<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

/// Forward activations needed by `Mtm::backward`.
pub struct MtmTrace<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
    pre: Tensor<T>,
}

impl<T: Scalar> Mtm<T> {
    pub fn init<R: Rng + ?Sized>(d_v: usize, d_e: usize, range: f64, rng: &mut R) -> Self {
        Self {
            l1: Linear {
                w: Parameter::new("mtm.w1", Tensor::uniform(&[d_e, d_v], range, rng)),
                b: Parameter::new("mtm.b1", Tensor::uniform(&[d_e], range, rng)),
            },
            l2: Linear {
                w: Parameter::new("mtm.w2", Tensor::uniform(&[d_e, d_e], range, rng)),
                b: Parameter::new("mtm.b2", Tensor::uniform(&[d_e], range, rng)),
            },
        }
    }

    pub fn zeros(d_v: usize, d_e: usize) -> Self {
        Self {
            l1: Linear { w: Parameter::new("mtm.w1", Tensor::zeros(&[d_e, d_v])), b: Parameter::new("mtm.b1", Tensor::zeros(&[d_e])) },
            l2: Linear { w: Parameter::new("mtm.w2", Tensor::zeros(&[d_e, d_e])), b: Parameter::new("mtm.b2", Tensor::zeros(&[d_e])) },
        }
    }

    pub fn d_v(&self) -> usize {
        self.l1.d_in()
    }

    pub fn d_e(&self) -> usize {
        self.l2.d_out()
    }

    /// Batched projection of pooled features `[B x d_v]` to `[B x d_e]`.
    pub fn forward(&self, pooled: &Tensor<T>) -> Result<(Tensor<T>, MtmTrace<T>)> {
        let hidden = self.l1.forward(pooled)?;
        let pre = self.l2.forward(&hidden)?;
        let out = relu(&pre);
        Ok((out, MtmTrace { input: pooled.clone(), hidden, pre }))
    }

    pub fn backward(&mut self, trace: &MtmTrace<T>, d_out: &Tensor<T>) -> Result<()> {
        let d_pre = relu_backward(&trace.pre, d_out)?;
        let d_hidden = self.l2.backward(&trace.hidden, &d_pre);
        self.l1.backward_params(&trace.input, &d_hidden);
        Ok(())
    }

    /// `u' = relu(W2 (W1 v_g + b1) + b2)` for one pooled vector.
    pub fn project(&self, v_g: &Tensor<T>) -> Result<Tensor<T>> {
        if v_g.len() != self.d_v() {
            return Err(Error::dim(format!("pooled feature of length {} for d_v {}", v_g.len(), self.d_v())));
        }
        let row = Tensor::matrix(1, v_g.len(), v_g.data().to_vec())?;
        self.forward(&row)?.0.reshape(vec![self.d_e()])
    }
}

impl<T: Scalar> Module<T> for Mtm<T> {
    fn params(&self) -> Vec<&Parameter<T>> {
        self.l1.params().into_iter().chain(self.l2.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let Self { l1, l2 } = self;
        l1.params_mut().into_iter().chain(l2.params_mut()).collect()
    }
}

/// Distance between the projected and the reference caption code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityLossKind {
    /// Mean squared error.
    Mse,
    /// Mean absolute error.
    Mae,
    /// `1 - cosine similarity`.
    Cos,
    /// `KL(softmax(target) || softmax(pred))`.
    Kld,
    /// Squared maximum mean discrepancy over the batch, RBF kernel.
    Mmd,
}

impl ModalityLossKind {
    pub const ALL: [ModalityLossKind; 5] = [Self::Mse, Self::Mae, Self::Cos, Self::Kld, Self::Mmd];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::Mae => "mae",
            Self::Cos => "cos",
            Self::Kld => "kld",
            Self::Mmd => "mmd",
        }
    }
}

impl fmt::Display for ModalityLossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModalityLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::input(format!("unknown modality loss {s:?} (expected mse, mae, cos, kld or mmd)")))
    }
}

fn check_pair<T: Scalar>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim(format!("modality loss over lengths {} and {}", pred.len(), target.len())));
    }
    Ok(())
}

/// Per-pair loss and its gradient with respect to `pred`. MMD is a batch
/// statistic and is rejected here.
pub fn pair_loss<T: Scalar>(kind: ModalityLossKind, pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    check_pair(pred, target)?;
    let d = T::of(pred.len() as f64);
    let two = T::of(2.0);
    match kind {
        ModalityLossKind::Mse => {
            let diff: Vec<T> = pred.iter().zip(target).map(|(&p, &t)| p - t).collect();
            let loss = diff.iter().map(|&x| x * x).sum::<T>() / d;
            Ok((loss, diff.iter().map(|&x| two * x / d).collect()))
        }
        ModalityLossKind::Mae => {
            let diff: Vec<T> = pred.iter().zip(target).map(|(&p, &t)| p - t).collect();
            let loss = diff.iter().map(|x| x.abs()).sum::<T>() / d;
            let grad = diff
                .iter()
                .map(|&x| if x > T::zero() { T::one() / d } else if x < T::zero() { -T::one() / d } else { T::zero() })
                .collect();
            Ok((loss, grad))
        }
        ModalityLossKind::Cos => {
            let np = pred.iter().map(|&x| x * x).sum::<T>().sqrt();
            let nt = target.iter().map(|&x| x * x).sum::<T>().sqrt();
            if np == T::zero() || nt == T::zero() {
                return Err(Error::input("cosine modality loss of a zero-norm vector"));
            }
            let dot = pred.iter().zip(target).map(|(&p, &t)| p * t).sum::<T>();
            let cos = dot / (np * nt);
            let grad = pred
                .iter()
                .zip(target)
                .map(|(&p, &t)| -(t / (np * nt) - cos * p / (np * np)))
                .collect();
            Ok((T::one() - cos, grad))
        }
        ModalityLossKind::Kld => {
            let p = softmax(target);
            let q = softmax(pred);
            let loss = p
                .iter()
                .zip(&q)
                .filter(|(&pi, _)| pi > T::zero())
                .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
                .sum::<T>();
            Ok((loss.max(T::zero()), q.iter().zip(&p).map(|(&qi, &pi)| qi - pi).collect()))
        }
        ModalityLossKind::Mmd => Err(Error::input("MMD needs a batch of at least 2 pairs")),
    }
}

/// Loss of a single `(u', u)` pair.
pub fn modality_loss<T: Scalar>(kind: ModalityLossKind, pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    Ok(pair_loss(kind, pred.data(), target.data())?.0)
}

/// Batch modality loss over rows of `preds`/`targets` (`[B x d_e]`).
///
/// MSE, MAE, COS and KLD average the per-pair losses; MMD is computed once
/// over the whole batch. Returns the loss and its gradient w.r.t. `preds`;
/// targets are constants.
pub fn modality_loss_batch<T: Scalar>(kind: ModalityLossKind, preds: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    preds.same_shape(targets)?;
    let (b, d) = preds.dims2();
    if kind == ModalityLossKind::Mmd {
        let (sigma, pairs) = median_pairs(preds, targets)?;
        let (value, mut grad) = mmd_rbf(preds, targets, sigma)?;
        if !pairs.is_empty() {
            // the bandwidth moves with the predictions through its defining pairs
            let ds = mmd_dsigma(preds, targets, sigma);
            let row = |i: usize| if i < b { preds.row(i) } else { targets.row(i - b) };
            for (i, j, w) in pairs {
                let (zi, zj) = (row(i).to_vec(), row(j).to_vec());
                let dist = sq_dist(&zi, &zj).sqrt();
                let coef = ds * w / dist;
                if i < b {
                    grad.row_mut(i).iter_mut().zip(zi.iter().zip(&zj)).for_each(|(g, (&p, &q))| *g += coef * (p - q));
                }
                if j < b {
                    grad.row_mut(j).iter_mut().zip(zi.iter().zip(&zj)).for_each(|(g, (&p, &q))| *g -= coef * (p - q));
                }
            }
        }
        return Ok((value, grad));
    }
    let inv_b = T::one() / T::of(b as f64);
    let mut grad = Tensor::zeros(&[b, d]);
    let mut total = T::zero();
    for r in 0..b {
        let (l, g) = pair_loss(kind, preds.row(r), targets.row(r))?;
        total += l;
        grad.row_mut(r).iter_mut().zip(g).for_each(|(o, gi)| *o = gi * inv_b);
    }
    Ok((total * inv_b, grad))
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Median pairwise distance over the rows of both batches, with the row
/// pairs that define it and their weights (1 for an odd count, 1/2 each for
/// an even one). The bandwidth falls back to 1, with no defining pair, when
/// that median is zero.
fn median_pairs<T: Scalar>(xs: &Tensor<T>, ys: &Tensor<T>) -> Result<(T, Vec<(usize, usize, T)>)> {
    if xs.rows() < 2 {
        return Err(Error::input(format!("MMD needs a batch of at least 2 pairs, got {}", xs.rows())));
    }
    let rows: Vec<&[T]> = (0..xs.rows()).map(|i| xs.row(i)).chain((0..ys.rows()).map(|i| ys.row(i))).collect();
    let mut dists: Vec<(T, usize, usize)> = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            dists.push((sq_dist(rows[i], rows[j]).sqrt(), i, j));
        }
    }
    dists.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
    let n = dists.len();
    let (median, pairs) = if n % 2 == 1 {
        let (d, i, j) = dists[n / 2];
        (d, vec![(i, j, T::one())])
    } else {
        let half = T::of(0.5);
        let ((a, i, j), (b, k, l)) = (dists[n / 2 - 1], dists[n / 2]);
        ((a + b) * half, vec![(i, j, half), (k, l, half)])
    };
    if median > T::zero() && median.is_finite() {
        Ok((median, pairs))
    } else {
        Ok((T::one(), Vec::new()))
    }
}

/// RBF bandwidth: median pairwise Euclidean distance over the pooled rows of
/// both batches (1 when that median is zero).
pub fn median_bandwidth<T: Scalar>(xs: &Tensor<T>, ys: &Tensor<T>) -> Result<T> {
    Ok(median_pairs(xs, ys)?.0)
}

/// Derivative of the biased squared MMD with respect to the bandwidth.
fn mmd_dsigma<T: Scalar>(xs: &Tensor<T>, ys: &Tensor<T>, sigma: T) -> T {
    let n = xs.rows();
    let two = T::of(2.0);
    let gamma = T::one() / (two * sigma * sigma);
    let s3 = sigma * sigma * sigma;
    // d/dsigma exp(-D / (2 sigma^2)) = exp(..) * D / sigma^3
    let dk = |a: &[T], b: &[T]| {
        let d = sq_dist(a, b);
        (-gamma * d).exp() * d / s3
    };
    let mut total = T::zero();
    for a in 0..n {
        for b in 0..n {
            total += dk(xs.row(a), xs.row(b)) + dk(ys.row(a), ys.row(b)) - two * dk(xs.row(a), ys.row(b));
        }
    }
    total / T::of((n * n) as f64)
}

/// Biased squared MMD with kernel `exp(-|a-b|^2 / (2 sigma^2))` and its
/// gradient with respect to `xs` (bandwidth held fixed).
pub fn mmd_rbf<T: Scalar>(xs: &Tensor<T>, ys: &Tensor<T>, sigma: T) -> Result<(T, Tensor<T>)> {
    xs.same_shape(ys)?;
    let (n, d) = xs.dims2();
    if n < 2 {
        return Err(Error::input(format!("MMD needs a batch of at least 2 pairs, got {n}")));
    }
    let gamma = T::one() / (T::of(2.0) * sigma * sigma);
    let k = |a: &[T], b: &[T]| (-gamma * sq_dist(a, b)).exp();
    let inv = T::one() / T::of((n * n) as f64);
    let two = T::of(2.0);
    let mut kxx = T::zero();
    let mut kyy = T::zero();
    let mut kxy = T::zero();
    let mut grad = Tensor::zeros(&[n, d]);
    for a in 0..n {
        for j in 0..n {
            let (xa, xj, yj) = (xs.row(a), xs.row(j), ys.row(j));
            let k_xx = k(xa, xj);
            let k_xy = k(xa, yj);
            kxx += k_xx;
            kyy += k(ys.row(a), yj);
            kxy += k_xy;
            // d k(a,b)/da = -2 gamma (a - b) k(a,b); the xx sum counts each pair twice
            let g = grad.row_mut(a);
            for t in 0..d {
                g[t] += inv * (two * (-two * gamma * (xa[t] - xj[t]) * k_xx) + two * two * gamma * (xa[t] - yj[t]) * k_xy);
            }
        }
    }
    let value = inv * (kxx + kyy - two * kxy);
    Ok((value.max(T::zero()), grad))
}
