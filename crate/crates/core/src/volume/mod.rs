//! Volumetric images with physical metadata and the grid-space preprocessing
//! that feeds both networks.

mod grid;
mod metaimage;
mod preprocess;
mod resample;

use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use grid::{
    localization_grid, localization_grid_with, segmentation_grid, segmentation_grid_with, solve_grid, GridBounds,
};
pub use metaimage::{
    read_header, read_labels, read_metaimage, read_volume, write_metaimage, ElementType, MetaHeader,
    MetaImage, MetaVoxel,
};
pub use preprocess::{gaussian_kernel, gaussian_smooth, normalize_intensities, INTENSITY_SCALE};
pub use resample::{resample, sample, Interpolation};

pub type Direction = [[f64; 3]; 3];

pub const IDENTITY: Direction = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// A sampling lattice in physical space. Axis order is `[x, y, z]`; the
/// direction matrix is row-major with column `j` giving the world direction of
/// index axis `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub direction: Direction,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            dims,
            spacing,
            origin: [0.0; 3],
            direction: IDENTITY,
        }
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidSpec(format!("zero dimension in {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidSpec(format!("non-positive spacing {:?}", self.spacing)));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidSpec("non-finite origin".into()));
        }
        let d = &self.direction;
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..3).map(|r| d[r][a] * d[r][b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-4 {
                    return Err(Error::InvalidSpec(format!(
                        "direction matrix is not orthonormal: {d:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Tensor spatial shape `[z, y, x]`.
    pub fn tensor_dims(&self) -> [usize; 3] {
        [self.dims[2], self.dims[1], self.dims[0]]
    }

    /// World position of a continuous index.
    pub fn index_to_physical(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut p = self.origin;
        for (r, pr) in p.iter_mut().enumerate() {
            for c in 0..3 {
                *pr += self.direction[r][c] * self.spacing[c] * idx[c];
            }
        }
        p
    }

    /// Continuous index of a world position.
    pub fn physical_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        let mut idx = [0.0; 3];
        for (c, ic) in idx.iter_mut().enumerate() {
            *ic = (0..3).map(|r| self.direction[r][c] * d[r]).sum::<f64>() / self.spacing[c];
        }
        idx
    }

    /// Physical centre of the voxel lattice.
    pub fn center(&self) -> [f64; 3] {
        self.index_to_physical(self.dims.map(|d| (d as f64 - 1.0) / 2.0))
    }

    /// Size of the voxel footprint along each index axis, in mm.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }

    /// Same dims and, within `tol`, the same spacing, origin and direction.
    pub fn congruent(&self, other: &GridSpec, tol: f64) -> bool {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol);
        self.dims == other.dims
            && close(&self.spacing, &other.spacing)
            && close(&self.origin, &other.origin)
            && (0..3).all(|r| close(&self.direction[r], &other.direction[r]))
    }
}

/// Sample type stored in an [`Image`].
pub trait Voxel: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    /// Integral samples are never linearly interpolated.
    const INTEGRAL: bool;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Voxel for f32 {
    const INTEGRAL: bool = false;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Voxel for u8 {
    const INTEGRAL: bool = true;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
}

impl Voxel for i16 {
    const INTEGRAL: bool = true;
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }
}

/// Scalar 3D field, `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    grid: GridSpec,
    data: Vec<T>,
}

pub type Volume = Image<f32>;
pub type LabelVolume = Image<u8>;

impl<T: Voxel> Image<T> {
    pub fn new(grid: GridSpec, data: Vec<T>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "grid {:?} needs {} samples, got {}",
                grid.dims,
                grid.len(),
                data.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: GridSpec, value: T) -> Self {
        let len = grid.len();
        Self {
            grid,
            data: vec![value; len],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
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

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.grid.linear_index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.grid.linear_index(x, y, z);
        self.data[i] = v;
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same samples on a different lattice description (dims must match).
    pub fn with_grid(mut self, grid: GridSpec) -> Result<Self> {
        if grid.dims != self.grid.dims {
            return Err(Error::GridMismatch(format!(
                "cannot relabel {:?} as {:?}",
                self.grid.dims, grid.dims
            )));
        }
        grid.validate()?;
        self.grid = grid;
        Ok(self)
    }
}

impl Volume {
    /// Single-channel `[1, z, y, x]` tensor view of the samples.
    pub fn to_tensor(&self) -> Tensor {
        let [z, y, x] = self.grid.tensor_dims();
        Tensor::new(vec![1, z, y, x], self.data.clone()).expect("grid length matches data")
    }
}

impl LabelVolume {
    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// `[classes, z, y, x]` one-hot encoding. Labels `>= classes` are an error.
    pub fn one_hot(&self, classes: usize) -> Result<Tensor> {
        let [z, y, x] = self.grid.tensor_dims();
        let v = self.grid.len();
        let mut t = Tensor::zeros(&[classes, z, y, x]);
        let d = t.data_mut();
        for (i, &l) in self.data.iter().enumerate() {
            let l = l as usize;
            if l >= classes {
                return Err(Error::Shape(format!("label {l} outside {classes} classes")));
            }
            d[l * v + i] = 1.0;
        }
        Ok(t)
    }

    /// Per-voxel argmax over the channels of a `[c, z, y, x]` tensor; ties go to
    /// the lowest channel.
    pub fn from_argmax(probs: &Tensor, grid: GridSpec) -> Result<Self> {
        let [c, z, y, x] = probs.dims4()?;
        if [z, y, x] != grid.tensor_dims() {
            return Err(Error::GridMismatch(format!(
                "tensor spatial dims {:?} vs grid {:?}",
                [z, y, x],
                grid.dims
            )));
        }
        let v = z * y * x;
        let d = probs.data();
        let data = (0..v)
            .map(|i| {
                let mut best = 0;
                for ch in 1..c {
                    if d[ch * v + i] > d[best * v + i] {
                        best = ch;
                    }
                }
                best as u8
            })
            .collect();
        Self::new(grid, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_physical_round_trip_with_rotation() {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let grid = GridSpec {
            dims: [4, 5, 6],
            spacing: [0.5, 1.5, 2.0],
            origin: [1.0, -2.0, 3.0],
            direction: [[c, -c, 0.0], [c, c, 0.0], [0.0, 0.0, 1.0]],
        };
        grid.validate().unwrap();
        let idx = [1.25, 3.0, -0.5];
        let back = grid.physical_to_index(grid.index_to_physical(idx));
        for a in 0..3 {
            assert!((back[a] - idx[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn validation_rejects_bad_metadata() {
        assert!(GridSpec::new([2, 2, 2], [1.0, 0.0, 1.0]).validate().is_err());
        let mut g = GridSpec::new([2, 2, 2], [1.0; 3]);
        g.direction[0][0] = 2.0;
        assert!(g.validate().is_err());
        assert!(Volume::new(GridSpec::new([2, 2, 2], [1.0; 3]), vec![0.0; 7]).is_err());
    }

    #[test]
    fn one_hot_and_argmax_invert() {
        let grid = GridSpec::new([3, 2, 2], [1.0; 3]);
        let labels = LabelVolume::new(grid.clone(), (0..12).map(|i| (i % 5) as u8).collect()).unwrap();
        let oh = labels.one_hot(5).unwrap();
        assert_eq!(LabelVolume::from_argmax(&oh, grid).unwrap(), labels);
        assert!(labels.one_hot(4).is_err());
    }
}
