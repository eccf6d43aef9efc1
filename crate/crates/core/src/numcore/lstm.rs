//! LSTM cell with an exact backward pass.
//!
//! Gate order inside the stacked pre-activation is fixed as
//! (input, forget, cell, output): for hidden size `d`, columns `[0, d)` feed
//! the input gate, `[d, 2d)` the forget gate, `[2d, 3d)` the cell candidate
//! and `[3d, 4d)` the output gate.
//!
//! ```text
//! z = x . W_x^T + h_prev . W_h^T + b
//! i = sigmoid(z_i)  f = sigmoid(z_f)  g = tanh(z_g)  o = sigmoid(z_o)
//! c = f * c_prev + i * g
//! h = o * tanh(c)
//! ```
//!
//! All tensors are batched along rows: `x` is `[B x d_in]`, states are `[B x d]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ops::sigmoid;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn};
use super::{Parameter, Tensor};

/// Weights of one LSTM layer. `w_x` is `[4d x d_in]`, `w_h` is `[4d x d]`, `b` is `[4d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub w_x: Parameter<T>,
    pub w_h: Parameter<T>,
    pub b: Parameter<T>,
}

/// Activations saved by the forward pass.
#[derive(Clone, Debug)]
pub struct CellCache<T> {
    x: Tensor<T>,
    h_prev: Tensor<T>,
    c_prev: Tensor<T>,
    /// Activated gates `[B x 4d]` in (i, f, g, o) order.
    gates: Tensor<T>,
    tanh_c: Tensor<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn init<R: Rng + ?Sized>(prefix: &str, d_in: usize, d: usize, range: f64, rng: &mut R) -> Self {
        Self {
            w_x: Parameter::new(format!("{prefix}.w_x"), Tensor::uniform(&[4 * d, d_in], range, rng)),
            w_h: Parameter::new(format!("{prefix}.w_h"), Tensor::uniform(&[4 * d, d], range, rng)),
            b: Parameter::new(format!("{prefix}.b"), Tensor::uniform(&[4 * d], range, rng)),
        }
    }

    pub fn zeros(prefix: &str, d_in: usize, d: usize) -> Self {
        Self {
            w_x: Parameter::new(format!("{prefix}.w_x"), Tensor::zeros(&[4 * d, d_in])),
            w_h: Parameter::new(format!("{prefix}.w_h"), Tensor::zeros(&[4 * d, d])),
            b: Parameter::new(format!("{prefix}.b"), Tensor::zeros(&[4 * d])),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.value.cols()
    }

    pub fn input(&self) -> usize {
        self.w_x.value.cols()
    }

    pub fn params(&self) -> [&Parameter<T>; 3] {
        [&self.w_x, &self.w_h, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.b]
    }

    pub fn forward(&self, x: &Tensor<T>, h_prev: &Tensor<T>, c_prev: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, CellCache<T>)> {
        let d = self.hidden();
        let (bsz, d_in) = x.dims2();
        if d_in != self.input() {
            return Err(Error::dim(format!("lstm input {:?} but layer expects {} columns", x.shape(), self.input())));
        }
        if h_prev.dims2() != (bsz, d) || c_prev.dims2() != (bsz, d) {
            return Err(Error::dim(format!(
                "lstm state shapes {:?}/{:?} do not match batch {bsz} x hidden {d}",
                h_prev.shape(),
                c_prev.shape()
            )));
        }
        let mut gates = Tensor::zeros(&[bsz, 4 * d]);
        gemm_nt(x, &self.w_x.value, &mut gates, false);
        gemm_nt(h_prev, &self.w_h.value, &mut gates, true);
        gates.add_row_bias(&self.b.value)?;

        let mut c = Tensor::zeros(&[bsz, d]);
        let mut h = Tensor::zeros(&[bsz, d]);
        let mut tanh_c = Tensor::zeros(&[bsz, d]);
        for r in 0..bsz {
            let z = gates.row_mut(r);
            for v in z[..2 * d].iter_mut() {
                *v = sigmoid(*v);
            }
            for v in z[2 * d..3 * d].iter_mut() {
                *v = v.tanh();
            }
            for v in z[3 * d..].iter_mut() {
                *v = sigmoid(*v);
            }
            let z = gates.row(r);
            let cp = c_prev.row(r);
            let (c_row, tc_row) = (c.row_mut(r), &mut tanh_c.data_mut()[r * d..(r + 1) * d]);
            for j in 0..d {
                c_row[j] = z[d + j] * cp[j] + z[j] * z[2 * d + j];
                tc_row[j] = c_row[j].tanh();
            }
            let h_row = h.row_mut(r);
            for j in 0..d {
                h_row[j] = z[3 * d + j] * tanh_c.row(r)[j];
            }
        }
        let cache = CellCache { x: x.clone(), h_prev: h_prev.clone(), c_prev: c_prev.clone(), gates, tanh_c };
        Ok((h, c, cache))
    }

    /// Backpropagates `(dh, dc)` through one step, accumulating parameter
    /// gradients. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(&mut self, cache: &CellCache<T>, dh: &Tensor<T>, dc: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let d = self.hidden();
        let (bsz, d_in) = cache.x.dims2();
        let one = T::one();
        let mut dz = Tensor::zeros(&[bsz, 4 * d]);
        let mut dc_prev = Tensor::zeros(&[bsz, d]);
        for r in 0..bsz {
            let z = cache.gates.row(r);
            let tc = cache.tanh_c.row(r);
            let cp = cache.c_prev.row(r);
            let (dh_r, dc_r) = (dh.row(r), dc.row(r));
            let dcp = dc_prev.row_mut(r);
            let mut dz_row = vec![T::zero(); 4 * d];
            for j in 0..d {
                let (i, f, g, o) = (z[j], z[d + j], z[2 * d + j], z[3 * d + j]);
                let d_o = dh_r[j] * tc[j];
                let dct = dc_r[j] + dh_r[j] * o * (one - tc[j] * tc[j]);
                dz_row[j] = dct * g * i * (one - i);
                dz_row[d + j] = dct * cp[j] * f * (one - f);
                dz_row[2 * d + j] = dct * i * (one - g * g);
                dz_row[3 * d + j] = d_o * o * (one - o);
                dcp[j] = dct * f;
            }
            dz.row_mut(r).copy_from_slice(&dz_row);
        }
        let mut dx = Tensor::zeros(&[bsz, d_in]);
        let mut dh_prev = Tensor::zeros(&[bsz, d]);
        gemm_nn(&dz, &self.w_x.value, &mut dx, false);
        gemm_nn(&dz, &self.w_h.value, &mut dh_prev, false);
        gemm_tn(&dz, &cache.x, &mut self.w_x.grad, true);
        gemm_tn(&dz, &cache.h_prev, &mut self.w_h.grad, true);
        dz.accumulate_col_sums(&mut self.b.grad);
        (dx, dh_prev, dc_prev)
    }
}

/// Single LSTM step on vectors (or row batches).
pub fn lstm_cell<T: Scalar>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    params: &LstmParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let as_row = |t: &Tensor<T>| Tensor::matrix(t.rows(), t.cols(), t.data().to_vec());
    let (h, c, _) = params.forward(&as_row(x)?, &as_row(h_prev)?, &as_row(c_prev)?)?;
    if h_prev.shape().len() == 1 {
        Ok((h.reshape(h_prev.shape().to_vec())?, c.reshape(c_prev.shape().to_vec())?))
    } else {
        Ok((h, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn scalar_params(wx: [f64; 4], wh: [f64; 4], b: [f64; 4]) -> LstmParams<f64> {
        let mut p = LstmParams::zeros("t", 1, 1);
        p.w_x.value = Tensor::matrix(4, 1, wx.to_vec()).unwrap();
        p.w_h.value = Tensor::matrix(4, 1, wh.to_vec()).unwrap();
        p.b.value = Tensor::vector(b.to_vec());
        p
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let p = LstmParams::<f64>::zeros("z", 3, 2);
        let (h, c) = lstm_cell(&Tensor::zeros(&[3]), &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &p).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
        assert_eq!(c.data(), &[0.0, 0.0]);
        assert_eq!(h.shape(), &[2]);
    }

    #[test]
    fn scalar_cell_matches_hand_reference() {
        let wx = [0.5, -0.3, 0.8, 0.1];
        let wh = [0.2, 0.4, -0.6, 0.7];
        let b = [0.1, 0.2, -0.1, 0.05];
        let (x, h0, c0) = (0.9, -0.4, 0.25);
        let i = sig(wx[0] * x + wh[0] * h0 + b[0]);
        let f = sig(wx[1] * x + wh[1] * h0 + b[1]);
        let g = (wx[2] * x + wh[2] * h0 + b[2]).tanh();
        let o = sig(wx[3] * x + wh[3] * h0 + b[3]);
        let c = f * c0 + i * g;
        let h = o * c.tanh();

        let p = scalar_params(wx, wh, b);
        let (hh, cc) = lstm_cell(
            &Tensor::vector(vec![x]),
            &Tensor::vector(vec![h0]),
            &Tensor::vector(vec![c0]),
            &p,
        )
        .unwrap();
        assert!((hh.data()[0] - h).abs() < 1e-15);
        assert!((cc.data()[0] - c).abs() < 1e-15);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let p = scalar_params([0.0; 4], [0.0; 4], [0.0, 20.0, 0.0, 0.0]);
        let c0 = 1.7;
        let (_, c) = lstm_cell(&Tensor::vector(vec![0.3]), &Tensor::vector(vec![0.0]), &Tensor::vector(vec![c0]), &p).unwrap();
        let oracle = sig(20.0) * c0 + sig(0.0) * 0.0f64.tanh();
        assert!((c.data()[0] - oracle).abs() < 1e-15);
        assert!((c.data()[0] - c0).abs() < 1e-8);
    }

    #[test]
    fn shape_mismatch() {
        let p = LstmParams::<f64>::zeros("z", 3, 2);
        assert!(lstm_cell(&Tensor::zeros(&[4]), &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &p).is_err());
        assert!(lstm_cell(&Tensor::zeros(&[3]), &Tensor::zeros(&[3]), &Tensor::zeros(&[2]), &p).is_err());
    }
}
