//! Dense tensors and the layer kernels both networks are built from.
//!
//! Activations are laid out `[channels, z, y, x]` with `x` fastest, convolution
//! weights `[out, in, kz, ky, kx]`. Every kernel exists in two forms: a
//! slice-level `*_into` function that writes into caller-provided storage (used
//! by the arena executor) and a `Tensor`-level wrapper that allocates.
//!
//! Kernels are generic over [`Real`] so the gradient suite can run them in
//! `f64`; the networks themselves compute in `f32`.

mod activation;
mod combine;
mod conv;
mod dropout;
mod init;
mod pool;
mod upsample;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use activation::{
    leaky_relu, leaky_relu_backward, leaky_relu_backward_into, leaky_relu_into, sigmoid,
    sigmoid_backward, sigmoid_backward_into, sigmoid_into, softmax_channels,
    softmax_channels_backward, softmax_channels_backward_into, softmax_channels_into,
};
pub use combine::{
    concat_channels, concat_channels_backward, concat_into, elementwise_mul,
    elementwise_mul_backward, mul_into,
};
pub use conv::{
    conv3d, conv3d_backward, conv3d_backward_input_into, conv3d_backward_params,
    conv3d_forward_into, ConvGeometry, ConvGrads,
};
pub use dropout::{dropout, dropout_backward, dropout_mask, Dropout};
pub use init::{he_init, he_std};
pub use pool::{avg_pool3d, avg_pool3d_backward, avg_pool3d_backward_into, avg_pool3d_into};
pub use upsample::{
    upsample_trilinear, upsample_trilinear_backward, upsample_trilinear_backward_into,
    upsample_trilinear_into,
};

/// Floating-point element type for tensors and kernels.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `[c, z, y, x]` of a rank-4 activation.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[c, z, y, x] => Ok([c, z, y, x]),
            s => Err(Error::Shape(format!("expected [C,Z,Y,X], got {s:?}"))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        check_same_shape(self, other, "add")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    /// Inner product over all elements, accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.f64() * b.f64())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel `c` of a rank-4 activation.
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.shape[1..].iter().product::<usize>();
        &self.data[c * n..(c + 1) * n]
    }
}

pub(crate) fn check_same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    Ok(())
}

pub(crate) fn debug_assert_finite<T: Real>(data: &[T], what: &str) {
    debug_assert!(
        data.iter().all(|v| v.is_finite()),
        "non-finite value produced by {what}"
    );
}

/// Spatial voxel count of a `[c, z, y, x]` shape.
pub(crate) fn voxels(dims: [usize; 4]) -> usize {
    dims[1] * dims[2] * dims[3]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_lengths() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn cast_round_trips_f32_through_f64() {
        let t = Tensor::<f32>::from_fn(&[3, 2], |i| i as f32 * 0.1);
        assert_eq!(t.cast::<f64>().cast::<f32>(), t);
    }
}
