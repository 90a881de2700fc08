//! Dense row-major f32 tensors.
//!
//! This is deliberately minimal: shape + flat storage plus the handful of
//! accessors the layer kernels need. Anything numerical lives in the layer
//! implementations themselves.

use crate::error::{Error, Result};

/// A dense tensor of 32-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Constant-filled tensor.
    pub fn filled(shape: &[usize], value: f32) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Build from existing storage. Errors if `data` does not match `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::usage(format!(
                "tensor shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f32] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Errors with a `Numeric` error naming `what` if any element is NaN/Inf.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::numeric(format!("non-finite value in {what}")))
        }
    }

    /// Bitwise equality (exact f32 bits, not tolerance-based).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_invariant() {
        let t = Tensor::zeros(&[2, 3]);
        assert_eq!(t.len(), 6);
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn finiteness_check_names_the_site() {
        let t = Tensor::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        let err = t.check_finite("layer3 output").unwrap_err();
        assert!(err.to_string().contains("layer3 output"));
    }

    #[test]
    fn bit_eq_distinguishes_negative_zero() {
        let a = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![-0.0]).unwrap();
        assert_ne!(a.data()[0].to_bits(), b.data()[0].to_bits());
        assert!(!a.bit_eq(&b));
        assert!(a.bit_eq(&a.clone()));
    }
}
