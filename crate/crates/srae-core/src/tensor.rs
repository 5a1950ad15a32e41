use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Storage element for graph evaluation. All arithmetic goes through `f64`
/// regardless of the storage width; `f32` storage rounds once per operation
/// output, `f64` storage keeps full precision (used by the finite-difference
/// oracle).
pub trait Scalar: Copy + PartialOrd + core::fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GTensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

/// The public tensor type: 32-bit storage.
pub type Tensor = GTensor<f32>;

impl<S: Scalar> GTensor<S> {
    /// Builds a tensor, checking that the shape matches the data length and
    /// that every value is finite.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero dimension in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            ));
        }
        if data.iter().any(|v| !v.to_f64().is_finite()) {
            return Err(Error::NonFinite { node: "tensor".into() });
        }
        Ok(GTensor { shape, data })
    }

    /// Unchecked constructor for kernel outputs; the graph evaluator runs its
    /// own finiteness scan on every op result.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        GTensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        GTensor { shape, data: vec![S::from_f64(0.0); numel] }
    }

    pub fn scalar(v: S) -> Self {
        GTensor { shape: vec![1], data: vec![v] }
    }

    /// From an `f64`-valued buffer, rounding into the storage type.
    pub fn from_f64_data(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        Ok(GTensor { shape, data: self.data.clone() })
    }

    pub fn cast<T: Scalar>(&self) -> GTensor<T> {
        GTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    /// Flat index for a `[h, w, c]` tensor.
    #[inline]
    pub fn idx3(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape[1] + x) * self.shape[2] + c
    }
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, data)
    }

    /// Single scalar value of a 1-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Tensor::from_vec(vec![2], vec![1.0, f32::NAN]).is_err());
        assert!(Tensor::from_vec(vec![2], vec![1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn idx3_row_major() {
        let t = Tensor::zeros(vec![2, 3, 4]);
        assert_eq!(t.idx3(0, 0, 0), 0);
        assert_eq!(t.idx3(0, 0, 3), 3);
        assert_eq!(t.idx3(0, 1, 0), 4);
        assert_eq!(t.idx3(1, 0, 0), 12);
    }
}
