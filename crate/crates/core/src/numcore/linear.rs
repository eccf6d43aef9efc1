use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn};
use super::{Parameter, Tensor};

/// Affine map `y = x . W^T + b` with `W` stored `[out x in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub w: Parameter<T>,
    pub b: Parameter<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng + ?Sized>(prefix: &str, d_in: usize, d_out: usize, range: f64, rng: &mut R) -> Self {
        Self {
            w: Parameter::new(format!("{prefix}.w"), Tensor::uniform(&[d_out, d_in], range, rng)),
            b: Parameter::new(format!("{prefix}.b"), Tensor::uniform(&[d_out], range, rng)),
        }
    }

    pub fn zeros(prefix: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            w: Parameter::new(format!("{prefix}.w"), Tensor::zeros(&[d_out, d_in])),
            b: Parameter::new(format!("{prefix}.b"), Tensor::zeros(&[d_out])),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.value.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w.value.rows()
    }

    pub fn params(&self) -> [&Parameter<T>; 2] {
        [&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (rows, d_in) = x.dims2();
        if d_in != self.d_in() {
            return Err(Error::dim(format!(
                "{} expects {} input columns, got {:?}",
                self.w.name,
                self.d_in(),
                x.shape()
            )));
        }
        let mut y = Tensor::zeros(&[rows, self.d_out()]);
        gemm_nt(x, &self.w.value, &mut y, false);
        y.add_row_bias(&self.b.value)?;
        Ok(y)
    }

    /// Accumulates `dW`, `db` and returns `dx`.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        gemm_tn(dy, x, &mut self.w.grad, true);
        dy.accumulate_col_sums(&mut self.b.grad);
        let mut dx = Tensor::zeros(&[x.rows(), self.d_in()]);
        gemm_nn(dy, &self.w.value, &mut dx, false);
        dx
    }

    /// Parameter-gradient part of `backward` only.
    pub fn backward_params(&mut self, x: &Tensor<T>, dy: &Tensor<T>) {
        gemm_tn(dy, x, &mut self.w.grad, true);
        dy.accumulate_col_sums(&mut self.b.grad);
    }
}

/// Gathers rows `ids` of an embedding table into `[ids.len() x d]`.
pub fn embed_rows<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let (n, d) = table.dims2();
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= n {
            return Err(Error::Index { index: id, len: n });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), d], out)
}

/// Adds row `r` of `d_rows` into row `ids[r]` of `grad`.
pub fn scatter_rows<T: Scalar>(grad: &mut Tensor<T>, ids: &[usize], d_rows: &Tensor<T>) {
    for (r, &id) in ids.iter().enumerate() {
        grad.row_mut(id).iter_mut().zip(d_rows.row(r)).for_each(|(g, &v)| *g += v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_and_scatter() {
        let table = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let e = embed_rows(&table, &[2, 0, 2]).unwrap();
        assert_eq!(e.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let mut g = Tensor::zeros(&[3, 2]);
        scatter_rows(&mut g, &[2, 0, 2], &Tensor::full(&[3, 2], 1.0));
        assert_eq!(g.data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(embed_rows(&table, &[3]).is_err());
    }
}
