//! Dense row-major f64 arrays, the value type flowing through compute graphs.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A dense, row-major array of `f64` with an explicit shape.
///
/// Rank 0 (empty shape) is a scalar, rank 1 a vector, rank 2 a matrix; higher
/// ranks are allowed for storage but the graph operations only consume ranks
/// 0 through 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseArray {
    /// Array of zeros with the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        DenseArray { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    /// Builds an array from a flat buffer; errors if the length does not match
    /// the shape's element count.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                details: format!("shape {:?} wants {} elements, got {}", shape, want, data.len()),
            });
        }
        Ok(DenseArray { shape: shape.to_vec(), data })
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        DenseArray { shape: Vec::new(), data: vec![value] }
    }

    /// Rank-1 vector.
    pub fn vector(data: Vec<f64>) -> Self {
        DenseArray { shape: vec![data.len()], data }
    }

    /// Rank-2 matrix from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The value of a rank-0 array; errors on any other rank.
    pub fn as_scalar(&self) -> Result<f64> {
        if self.rank() == 0 {
            Ok(self.data[0])
        } else {
            Err(Error::ShapeMismatch {
                op: "as_scalar",
                details: format!("expected rank 0, got shape {:?}", self.shape),
            })
        }
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sets every element to zero in place.
    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Copies data from `src`, which must have the same element count.
    pub fn copy_from_slice(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "copy_from_slice",
                details: format!("have {} elements, source has {}", self.data.len(), src.len()),
            });
        }
        self.data.copy_from_slice(src);
        Ok(())
    }

    /// `self += factor * other` element-wise; shapes must match exactly.
    pub fn add_scaled(&mut self, other: &DenseArray, factor: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_scaled",
                details: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += factor * b;
        }
        Ok(())
    }

    /// `self *= factor` element-wise.
    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}
