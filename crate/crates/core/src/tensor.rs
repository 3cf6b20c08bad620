//! Dense row-major `f32` tensor.
//!
//! Every array that crosses a module boundary (image features, depth
//! distributions, masks, BEV planes) is carried by [`Tensor`]. Tensors are
//! validated on construction: the shape must be non-empty with positive
//! extents, the data length must match, and every value must be finite.

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::EmptyShape);
    }
    if shape.len() > MAX_RANK {
        return Err(Error::RankOverflow(shape.len()));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel = check_shape(&shape)?;
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("data length {} does not match", data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Result<Self> {
        let numel = check_shape(shape)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteValue { index: 0 });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        })
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f32) -> Result<Self> {
        let numel = check_shape(shape)?;
        Self::new(shape.to_vec(), (0..numel).map(f).collect())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("cannot stack zero tensors".into()))?;
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(parts.len());
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for (i, p) in parts.iter().enumerate() {
            if p.shape != first.shape {
                return Err(Error::ShapeMismatch(format!(
                    "stack part {i} has shape {:?}, expected {:?}",
                    p.shape, first.shape
                )));
            }
            data.extend_from_slice(&p.data);
        }
        check_shape(&shape)?;
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Contiguous data of the `i`-th sub-tensor along axis 0.
    pub fn outer(&self, i: usize) -> &[f32] {
        let inner = self.len() / self.shape[0];
        &self.data[i * inner..(i + 1) * inner]
    }

    /// Sub-tensor `i` along axis 0 as an owned tensor.
    pub fn outer_tensor(&self, i: usize) -> Result<Tensor> {
        if self.rank() < 2 || i >= self.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "cannot take outer index {i} of shape {:?}",
                self.shape
            )));
        }
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.outer(i).to_vec(),
        })
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    /// Applies `f` elementwise. The result is re-validated for finiteness.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// True when both tensors have the same shape and identical bit patterns.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}
