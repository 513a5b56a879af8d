//! Dense 64-bit float matrices and vectors. Vectors are n×1 tensors, scalars
//! 1×1; there is no broadcasting, every shape is explicit.

use crate::{Error, Result};

/// Row-major dense tensor. Entries are validated finite at construction so
/// NaN/Inf never propagate silently into a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{}x{} needs {} entries, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::domain("tensor", format!("non-finite entry {bad}")));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(n, 1, data)
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Tensor::new(1, 1, vec![x])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn is_vector(&self) -> bool {
        self.cols == 1
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for optimizer updates and finite-difference probes.
    /// Callers must keep entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, x: f64) {
        self.data[r * self.cols + c] = x;
    }

    pub fn as_scalar(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::shape("as_scalar", format!("got {}", self.shape_str())));
        }
        Ok(self.data[0])
    }

    /// Row `r` as a column vector.
    pub fn row(&self, r: usize) -> Result<Tensor> {
        if r >= self.rows {
            return Err(Error::shape("row", format!("row {} of {}", r, self.shape_str())));
        }
        let start = r * self.cols;
        Tensor::vector(self.data[start..start + self.cols].to_vec())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::new(2, 2, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.get(0, 2), 3.0);
        assert_eq!(t.get(1, 0), 4.0);
        assert_eq!(t.row(1).unwrap().data(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn scalar_round_trip() {
        assert_eq!(Tensor::scalar(2.5).unwrap().as_scalar().unwrap(), 2.5);
        assert!(Tensor::vector(vec![1.0, 2.0]).unwrap().as_scalar().is_err());
    }
}
