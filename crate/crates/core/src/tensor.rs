//! Dense row-major tensors.
//!
//! The training engine stores everything — activations, weights, gradients —
//! as `Tensor` (f32). A double-precision twin backs the numerical checks in
//! `nn::reference`.

use crate::error::{Error, Result};

/// Dense tensor with explicit shape and row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// The working precision used by training and inference.
pub type Tensor = TensorBase<f32>;
/// Double-precision twin used by numerical verification.
pub type Tensor64 = TensorBase<f64>;

impl<T: Copy + Default> TensorBase<T> {
    /// Tensor of the given shape filled with `T::default()` (zero for floats).
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        TensorBase { shape: shape.to_vec(), data: vec![T::default(); n] }
    }

    /// Tensor of the given shape filled with one value.
    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        TensorBase { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterprets the buffer under a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Architecture(format!(
                "cannot reshape {} elements into {:?}",
                self.data.len(),
                shape
            )));
        }
        Ok(TensorBase { shape: shape.to_vec(), data: self.data.clone() })
    }
}

impl<T: Copy + Default + PartialOrd + std::fmt::Debug> TensorBase<T> {
    /// Builds a tensor from raw data, checking the element count.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Architecture(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(TensorBase { shape: shape.to_vec(), data })
    }
}

impl Tensor {
    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{what}: non-finite value at flat index {i}")));
        }
        Ok(())
    }

    /// Widens to the double-precision twin.
    pub fn to_f64(&self) -> Tensor64 {
        TensorBase { shape: self.shape.clone(), data: self.data.iter().map(|&v| v as f64).collect() }
    }
}

impl Tensor64 {
    /// Narrows back to working precision.
    pub fn to_f32(&self) -> Tensor {
        TensorBase { shape: self.shape.clone(), data: self.data.iter().map(|&v| v as f32).collect() }
    }
}
