use alloc::vec::Vec;

use crate::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking extents and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::arg("tensor extents must be positive"));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape("Tensor::new", len, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, alloc::vec![0.0; len])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(alloc::vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(alloc::vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    /// Applies `f` elementwise in place; the result must stay finite.
    pub fn try_update(&mut self, mut f: impl FnMut(&mut [f64])) -> Result<()> {
        let mut next = self.data.clone();
        f(&mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::try_update".into()));
        }
        self.data = next;
        Ok(())
    }

    /// `self · v` for a 2-D tensor.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let cols = self.cols();
        debug_assert_eq!(cols, v.len());
        self.data
            .chunks_exact(cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Tensor::new(alloc::vec![2, 2], alloc::vec![0.0; 3]).is_err());
        assert!(Tensor::new(alloc::vec![0], alloc::vec![]).is_err());
        assert!(Tensor::vector(alloc::vec![f64::NAN]).is_err());
        let mut t = Tensor::vector(alloc::vec![1.0]).unwrap();
        assert!(t.try_update(|d| d[0] = f64::INFINITY).is_err());
        assert_eq!(t.data(), &[1.0]);
    }

    #[test]
    fn matvec_row_major() {
        let m = Tensor::matrix(2, 3, alloc::vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), alloc::vec![-2.0, -2.0]);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.get(0, 2), 3.0);
    }
}
