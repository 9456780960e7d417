//! N-dimensional tensor and the scalar abstraction over f32/f64.
//!
//! Parameters and activations run in f32 in production. Every layer is
//! generic over [`Scalar`] so the same code path can be instantiated in f64
//! for finite-difference gradient checks, where f32 rounding would drown the
//! comparison.

use ndarray::LinalgScalar;
use num_traits::{Float, NumAssign};

use crate::error::{Error, Result};

pub trait Scalar:
    Float + NumAssign + LinalgScalar + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor of arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorN<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> TensorN<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        TensorN {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, buffer holds {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(TensorN {
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

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Reinterprets the buffer with a new shape of equal volume.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot view {:?} as {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_volume() {
        assert!(TensorN::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            TensorN::<f32>::from_vec(&[2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn reshape_preserves_volume() {
        let t = TensorN::<f64>::zeros(&[4, 6]);
        assert!(t.clone().reshaped(&[2, 12]).is_ok());
        assert!(matches!(t.reshaped(&[5, 5]), Err(Error::Dimension(_))));
    }
}
