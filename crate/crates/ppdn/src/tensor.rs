//! Dense row-major f64 tensors.
//!
//! Everything in the engine is carried by [`Tensor`]: inputs, parameters,
//! intermediate activations, and gradients. Values are 64-bit floats so the
//! finite-difference oracles and the dot-product identity checks are not
//! dominated by rounding.

use crate::error::{Error, Result};

/// Floor applied to L2 norms before dividing, so a zero vector normalizes to
/// a zero vector instead of blowing up.
pub const NORM_FLOOR: f64 = 1e-12;

/// Dense multi-dimensional value array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data.len()` matches the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.contains(&0) {
            return Err(Error::BadTensor {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// 1-D tensor from a flat vector.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Number of rows when interpreted as a matrix (1 for vectors/scalars).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Size of the last axis (the whole length for vectors).
    pub fn row_len(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.row_len() + col]
    }

    /// Row `r` as a slice, for 1-D or 2-D tensors.
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// `v / max(‖v‖₂, δ)` with `δ =` [`NORM_FLOOR`]. A zero vector maps to the
/// zero vector; otherwise the output has unit norm.
pub fn l2_normalize(v: &Tensor) -> Tensor {
    let norm = v.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm.max(NORM_FLOOR);
    Tensor {
        shape: v.shape.clone(),
        data: v.data.iter().map(|x| x / denom).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let out = l2_normalize(&Tensor::vector(vec![3.0, 4.0]));
        assert_eq!(out.data(), &[0.6, 0.8]);
    }

    #[test]
    fn l2_normalize_zero_vector_stays_zero() {
        let out = l2_normalize(&Tensor::vector(vec![0.0, 0.0]));
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn l2_normalize_single_element() {
        let out = l2_normalize(&Tensor::vector(vec![5.0]));
        assert_eq!(out.data(), &[1.0]);
    }

    #[test]
    fn row_access() {
        let t = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(t.at(0, 2), 3.0);
    }
}
