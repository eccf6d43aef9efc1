use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
///
/// Two-dimensional tensors are the working currency of the kernels; a
/// one-dimensional tensor of length `n` is treated as a `1 x n` row where a
/// matrix is expected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("shape {shape:?} has a zero extent")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix by stacking equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Samples every entry from `uniform(-range, range)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], range: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(rng.random_range(-range..range))).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` view; a vector is a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                let c = *s.last().unwrap_or(&1);
                (self.data.len() / c.max(1), c)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!("shapes {:?} and {:?} differ", self.shape, other.shape)));
        }
        Ok(())
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Adds `bias` to every row.
    pub fn add_row_bias(&mut self, bias: &Self) -> Result<()> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::dim(format!(
                "bias of shape {:?} does not match rows of {:?}",
                bias.shape, self.shape
            )));
        }
        for row in self.data.chunks_mut(c) {
            row.iter_mut().zip(&bias.data).for_each(|(a, &b)| *a += b);
        }
        Ok(())
    }

    /// Column sums accumulated into `out` (the bias-gradient rule).
    pub fn accumulate_col_sums(&self, out: &mut Self) {
        let c = self.cols();
        debug_assert_eq!(out.len(), c);
        for row in self.data.chunks(c) {
            out.data.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
        }
    }

    /// Standard matrix product `[m x k] . [k x n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        if k != k2 || self.shape.len() > 2 || other.shape.len() > 2 {
            return Err(Error::dim(format!(
                "matmul of {:?} and {:?}: inner dimensions disagree",
                self.shape, other.shape
            )));
        }
        let mut out = Self::zeros(&[m, n]);
        T::gemm(m, k, n, T::one(), &self.data, k, 1, &other.data, n, 1, T::zero(), &mut out.data);
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.dims2();
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }
}

/// `out (+)= a . b^T` where `a` is `[m x k]` and `b` is `[n x k]`.
pub(crate) fn gemm_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>, accumulate: bool) {
    let (m, k) = a.dims2();
    let (n, k2) = b.dims2();
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.len(), m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), &a.data, k, 1, &b.data, 1, k, beta, &mut out.data);
}

/// `out (+)= a . b` where `a` is `[m x k]` and `b` is `[k x n]`.
pub(crate) fn gemm_nn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>, accumulate: bool) {
    let (m, k) = a.dims2();
    let (k2, n) = b.dims2();
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.len(), m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), &a.data, k, 1, &b.data, n, 1, beta, &mut out.data);
}

/// `out (+)= a^T . b` where `a` is `[k x m]` and `b` is `[k x n]`.
pub(crate) fn gemm_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, out: &mut Tensor<T>, accumulate: bool) {
    let (k, m) = a.dims2();
    let (k2, n) = b.dims2();
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.len(), m * n);
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), &a.data, 1, m, &b.data, n, 1, beta, &mut out.data);
}

/// Gradients of `C = A . B` given `dC`: `(dC . B^T, A^T . dC)`.
pub fn matmul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, dc: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let mut da = Tensor::zeros(&[a.rows(), a.cols()]);
    let mut db = Tensor::zeros(&[b.rows(), b.cols()]);
    gemm_nt(dc, b, &mut da, false);
    gemm_tn(a, dc, &mut db, false);
    (da, db)
}
