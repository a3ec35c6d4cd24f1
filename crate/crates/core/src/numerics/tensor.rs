//! Dense row-major `f64` tensors.
//!
//! Every tensor is viewed as a matrix for arithmetic purposes: the last
//! dimension is the column count and all leading dimensions are folded into
//! rows. A rank-1 tensor of length `n` is therefore a `1 × n` row vector, and
//! a rank-3 `[k, m, n]` tensor behaves like a `(k·m) × n` matrix.

use std::fmt;

use super::NumericsError;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Self {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// Builds a `rows × cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data under a new shape with identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NumericsError::DataLength {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// `out[i, j] = Σ_k x[i, k] · w[j, k] (+ b[j])`.
///
/// Rows of `x` that are entirely zero skip the inner product; their output is
/// exactly the bias, so all such rows share bitwise-identical values.
pub(crate) fn linear_rows(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let (n, k, m) = (x.rows(), x.cols(), w.rows());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let xi = x.row(i);
        let oi = &mut out[i * m..(i + 1) * m];
        if let Some(b) = b {
            oi.copy_from_slice(b.data());
        }
        if xi.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (j, o) in oi.iter_mut().enumerate() {
            let wj = &w.data()[j * k..(j + 1) * k];
            *o += dot(xi, wj);
        }
    }
    out
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_views() {
        let t = Tensor::zeros(&[3, 2, 4]);
        assert_eq!(t.rows(), 6);
        assert_eq!(t.cols(), 4);
        let v = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!((v.rows(), v.cols()), (1, 2));
    }

    #[test]
    fn data_length_is_checked() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::zeros(&[2]).reshaped(&[3]).is_err());
    }

    #[test]
    fn zero_rows_get_bias_only() {
        let x = Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 2.0]).unwrap();
        let w = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        let b = Tensor::vector(vec![0.5]);
        assert_eq!(linear_rows(&x, &w, Some(&b)), vec![0.5, 11.5]);
    }
}
