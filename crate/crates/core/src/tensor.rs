//! Dense n-dimensional tensors of 64-bit floats.
//!
//! Storage is row-major: for shape `[d0, d1, ..., dk]` the flat offset of
//! index `(i0, i1, ..., ik)` is `((i0 * d1 + i1) * d2 + ...) * dk + ik`.
//! Every operation in this crate documents its index arithmetic against this
//! layout, which is what makes the slicing transforms bit-exact reshapes.

use crate::error::{dim_err, Error, Result};

/// Dense row-major tensor. Invariants: every extent is at least 1 and
/// `data.len() == product(shape)`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.data.len())
        }
    }
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d >= 1),
            "tensor extents must all be >= 1, got {shape:?}"
        );
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.is_empty() || shape.iter().any(|&d| d < 1) {
            return Err(dim_err!("tensor extents must all be >= 1, got {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err!(
                "shape {shape:?} wants {n} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
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
        false // extents are >= 1, so a tensor always holds at least one value
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major strides for the current shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0usize;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(
                i < self.shape[k],
                "index {idx:?} out of shape {:?}",
                self.shape
            );
            off = off * self.shape[k] + i;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    /// Same storage under a new shape; total element count must match.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        self.clone().into_reshape(new_shape)
    }

    /// Reshape without copying the buffer.
    pub fn into_reshape(self, new_shape: &[usize]) -> Result<Tensor> {
        if new_shape.is_empty() || new_shape.iter().any(|&d| d < 1) {
            return Err(dim_err!(
                "tensor extents must all be >= 1, got {new_shape:?}"
            ));
        }
        let n: usize = new_shape.iter().product();
        if n != self.data.len() {
            return Err(dim_err!(
                "cannot reshape {:?} ({} values) into {new_shape:?} ({n} values)",
                self.shape,
                self.data.len()
            ));
        }
        Ok(Tensor {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Tensor {
        self.map(|x| a * x)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(dim_err!("add: {:?} vs {:?}", self.shape, other.shape));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "add_assign: {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A value tensor paired with an accumulated cotangent of identical shape.
///
/// Single-writer: a `DualTensor` must not be shared across concurrent
/// backward passes.
#[derive(Clone, Debug)]
pub struct DualTensor {
    pub value: Tensor,
    pub grad: Tensor,
}

impl DualTensor {
    pub fn new(value: Tensor) -> DualTensor {
        let grad = Tensor::zeros(value.shape());
        DualTensor { value, grad }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = 0.0;
        }
    }

    /// Accumulate a cotangent; shapes must agree.
    pub fn accumulate(&mut self, cotangent: &Tensor) -> crate::error::Result<()> {
        if cotangent.shape() != self.value.shape() {
            return Err(Error::Dim(format!(
                "cotangent shape {:?} does not match value shape {:?}",
                cotangent.shape(),
                self.value.shape()
            )));
        }
        self.grad.add_assign(cotangent)
    }
}
