//! Additive attention over region features.
//!
//! ```text
//! e_i   = w . tanh(W_h h + W_v v_i + b)
//! alpha = softmax(e)
//! ctx   = sum_i alpha_i v_i
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::mtm::RegionFeatures;
use crate::numcore::ops::softmax;
use crate::numcore::tensor::{gemm_nt, gemm_tn};
use crate::numcore::{Linear, Parameter, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T> {
    /// `W_h` and `b`, applied to the decoder state.
    pub query: Linear<T>,
    /// `W_v`, `[d_a x d_v]`.
    pub w_v: Parameter<T>,
    /// Scoring vector `w`, `[d_a]`.
    pub w: Parameter<T>,
}

/// Activations of one attention read for one row.
#[derive(Clone, Debug)]
pub struct AttendCache<T> {
    pub weights: Vec<T>,
    /// `tanh(W_h h + W_v v_i + b)`, `[K x d_a]`.
    act: Tensor<T>,
}

impl<T: Scalar> Attention<T> {
    pub fn init<R: Rng + ?Sized>(d_h: usize, d_v: usize, d_a: usize, range: f64, rng: &mut R) -> Self {
        Self {
            query: Linear::init("cap.att.query", d_h, d_a, range, rng),
            w_v: Parameter::new("cap.att.w_v", Tensor::uniform(&[d_a, d_v], range, rng)),
            w: Parameter::new("cap.att.w", Tensor::uniform(&[d_a], range, rng)),
        }
    }

    pub fn zeros(d_h: usize, d_v: usize, d_a: usize) -> Self {
        Self {
            query: Linear::zeros("cap.att.query", d_h, d_a),
            w_v: Parameter::new("cap.att.w_v", Tensor::zeros(&[d_a, d_v])),
            w: Parameter::new("cap.att.w", Tensor::zeros(&[d_a])),
        }
    }

    pub fn d_a(&self) -> usize {
        self.w.value.len()
    }

    pub fn d_v(&self) -> usize {
        self.w_v.value.cols()
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let [qw, qb] = self.query.params();
        vec![qw, qb, &self.w_v, &self.w]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let [qw, qb] = self.query.params_mut();
        vec![qw, qb, &mut self.w_v, &mut self.w]
    }

    /// `V . W_v^T`, `[K x d_a]`; constant over the decoding steps of one scene.
    pub fn project_regions(&self, v: &Tensor<T>) -> Tensor<T> {
        let mut out = Tensor::zeros(&[v.rows(), self.d_a()]);
        gemm_nt(v, &self.w_v.value, &mut out, false);
        out
    }

    /// One read given the projected query row `W_h h + b`.
    pub(crate) fn read(&self, query: &[T], vproj: &Tensor<T>, v: &Tensor<T>) -> (Vec<T>, AttendCache<T>) {
        let (k, d_a) = vproj.dims2();
        let w = self.w.value.data();
        let mut act = vproj.clone();
        let mut scores = Vec::with_capacity(k);
        for i in 0..k {
            let row = act.row_mut(i);
            let mut e = T::zero();
            for j in 0..d_a {
                row[j] = (row[j] + query[j]).tanh();
                e += w[j] * row[j];
            }
            scores.push(e);
        }
        let weights = softmax(&scores);
        let mut ctx = vec![T::zero(); v.cols()];
        for (i, &a) in weights.iter().enumerate() {
            ctx.iter_mut().zip(v.row(i)).for_each(|(c, &x)| *c += a * x);
        }
        (ctx, AttendCache { weights, act })
    }

    /// Backpropagates `dctx` through one read. Accumulates the gradient of
    /// `w` here; the query gradient is added to `dquery` and the gradient of
    /// the projected regions to `dvproj`, for the caller to push through
    /// `query` and `w_v`.
    pub(crate) fn read_backward(
        &mut self,
        cache: &AttendCache<T>,
        v: &Tensor<T>,
        dctx: &[T],
        dquery: &mut [T],
        dvproj: &mut Tensor<T>,
    ) {
        let (k, d_a) = cache.act.dims2();
        let dalpha: Vec<T> = (0..k).map(|i| v.row(i).iter().zip(dctx).map(|(&x, &d)| x * d).sum()).collect();
        let mean: T = cache.weights.iter().zip(&dalpha).map(|(&a, &d)| a * d).sum();
        let w = self.w.value.data().to_vec();
        let wg = self.w.grad.data_mut();
        for i in 0..k {
            let de = cache.weights[i] * (dalpha[i] - mean);
            let act = cache.act.row(i);
            let dv = dvproj.row_mut(i);
            for j in 0..d_a {
                wg[j] += de * act[j];
                let dpre = de * w[j] * (T::one() - act[j] * act[j]);
                dquery[j] += dpre;
                dv[j] += dpre;
            }
        }
    }

    /// Adds `dvproj^T . V` into the gradient of `W_v`.
    pub(crate) fn regions_backward(&mut self, v: &Tensor<T>, dvproj: &Tensor<T>) {
        gemm_tn(dvproj, v, &mut self.w_v.grad, true);
    }

    /// Context vector `[d_v]` and weights `[K]` for decoder state `h`.
    pub fn attend(&self, h: &[T], v: &RegionFeatures<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if v.dim() != self.d_v() {
            return Err(Error::dim(format!("regions of width {} for attention over d_v {}", v.dim(), self.d_v())));
        }
        let q = self.query.forward(&Tensor::matrix(1, h.len(), h.to_vec())?)?;
        let vproj = self.project_regions(v.matrix());
        let (ctx, cache) = self.read(q.data(), &vproj, v.matrix());
        Ok((Tensor::vector(ctx), Tensor::vector(cache.weights)))
    }
}
