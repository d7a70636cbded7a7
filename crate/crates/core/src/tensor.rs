//! Dense row-major `f64` tensor used for heatmaps, regression fields and
//! ground-truth tables.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "tensor payload",
                expected: vec![expected],
                actual: vec![data.len()],
            });
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Size of one slice along the leading axis.
    pub fn plane_len(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn plane(&self, index: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn plane_mut(&mut self, index: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[index * n..(index + 1) * n]
    }

    /// Same data under new dims with the same element count.
    pub fn reshaped(&self, dims: &[usize]) -> Tensor {
        assert_eq!(dims.iter().product::<usize>(), self.data.len(), "reshape size");
        Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn expect_dims(&self, what: &'static str, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::ShapeMismatch {
                what,
                expected: dims.to_vec(),
                actual: self.dims.clone(),
            });
        }
        Ok(())
    }
}
