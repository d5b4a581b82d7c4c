//! Target-grid solvers for the localization and segmentation inputs.

use super::{Direction, GridSpec, Volume};
use crate::pipeline::Roi;

/// Spacing and size limits for a resampling target.
#[derive(Clone, Debug, PartialEq)]
pub struct GridBounds {
    /// Preferred isotropic spacing in mm; only ever increased.
    pub base_spacing: f64,
    /// `[x, y, z]` lower clamp.
    pub min_dims: [usize; 3],
    /// `[x, y, z]` upper limit, reached by coarsening the spacing.
    pub max_dims: [usize; 3],
    /// Every output dim is a multiple of this.
    pub multiple: usize,
}

impl GridBounds {
    pub fn localization() -> Self {
        Self {
            base_spacing: 6.0,
            min_dims: [32, 32, 32],
            max_dims: [80, 80, 256],
            multiple: 16,
        }
    }

    /// The spatial pathway pools by 4 and then halves three more times, hence 32.
    pub fn segmentation() -> Self {
        Self {
            base_spacing: 2.0,
            min_dims: [32, 32, 32],
            max_dims: [160, 128, 160],
            multiple: 32,
        }
    }
}

fn dims_for(extent: [f64; 3], spacing: f64, b: &GridBounds) -> [usize; 3] {
    let mut dims = [0; 3];
    for a in 0..3 {
        let raw = ((extent[a] / spacing) - 1e-6).ceil().max(1.0) as usize;
        let rounded = raw.div_ceil(b.multiple) * b.multiple;
        dims[a] = rounded.max(b.min_dims[a]);
    }
    dims
}

/// Isotropic grid covering `extent` (mm) centred on `center`.
///
/// Dims are `ceil(extent / spacing)` rounded up to `multiple` and clamped from
/// below; if that exceeds `max_dims`, the spacing is scaled by the smallest
/// uniform factor that fits.
pub fn solve_grid(extent: [f64; 3], center: [f64; 3], direction: Direction, b: &GridBounds) -> GridSpec {
    assert!(
        b.max_dims.iter().all(|m| m % b.multiple == 0) && b.min_dims.iter().zip(&b.max_dims).all(|(lo, hi)| lo <= hi),
        "inconsistent grid bounds {b:?}"
    );
    let mut spacing = b.base_spacing;
    let mut dims = dims_for(extent, spacing, b);
    if dims.iter().zip(&b.max_dims).any(|(d, m)| d > m) {
        let factor = (0..3)
            .map(|a| extent[a] / b.base_spacing / b.max_dims[a] as f64)
            .fold(1.0, f64::max);
        spacing = b.base_spacing * factor;
        dims = dims_for(extent, spacing, b);
        while dims.iter().zip(&b.max_dims).any(|(d, m)| d > m) {
            spacing *= 1.0 + 1e-9;
            dims = dims_for(extent, spacing, b);
        }
    }
    let mut grid = GridSpec {
        dims,
        spacing: [spacing; 3],
        origin: [0.0; 3],
        direction,
    };
    let half = grid.index_to_physical(dims.map(|d| (d as f64 - 1.0) / 2.0));
    grid.origin = [center[0] - half[0], center[1] - half[1], center[2] - half[2]];
    grid
}

/// Coarse grid for the localization model covering the whole image.
pub fn localization_grid(vol: &Volume) -> GridSpec {
    localization_grid_with(vol.grid(), &GridBounds::localization())
}

pub fn localization_grid_with(src: &GridSpec, b: &GridBounds) -> GridSpec {
    solve_grid(src.extent(), src.center(), src.direction, b)
}

/// Fine grid for the segmentation model covering `roi`.
pub fn segmentation_grid(roi: &Roi) -> GridSpec {
    segmentation_grid_with(roi, &GridBounds::segmentation())
}

pub fn segmentation_grid_with(roi: &Roi, b: &GridBounds) -> GridSpec {
    let r = &roi.reference;
    let extent = [0, 1, 2].map(|a| (roi.max[a] - roi.min[a] + 1) as f64 * r.spacing[a]);
    let center = r.index_to_physical([0, 1, 2].map(|a| (roi.min[a] + roi.max[a]) as f64 / 2.0));
    solve_grid(extent, center, r.direction, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::IDENTITY;

    fn loc(extent: [f64; 3]) -> GridSpec {
        solve_grid(extent, [0.0; 3], IDENTITY, &GridBounds::localization())
    }

    #[test]
    fn localization_examples() {
        let g = loc([192.0; 3]);
        assert_eq!((g.dims, g.spacing), ([32; 3], [6.0; 3]));
        let g = loc([300.0, 300.0, 480.0]);
        assert_eq!((g.dims, g.spacing), ([64, 64, 80], [6.0; 3]));
        let g = loc([600.0, 600.0, 1800.0]);
        assert_eq!(g.dims, [80, 80, 240]);
        assert!((g.spacing[0] - 7.5).abs() < 1e-12);
    }

    #[test]
    fn segmentation_examples() {
        let seg = |e| solve_grid(e, [0.0; 3], IDENTITY, &GridBounds::segmentation());
        assert_eq!(seg([64.0; 3]).dims, [32; 3]);
        let g = seg([320.0, 256.0, 320.0]);
        assert_eq!((g.dims, g.spacing), ([160, 128, 160], [2.0; 3]));
        let g = seg([400.0, 256.0, 320.0]);
        assert!((g.spacing[0] - 2.5).abs() < 1e-12);
        // 400/2.5 = 160, 256/2.5 = 102.4 -> 103 -> 128, 320/2.5 = 128.
        assert_eq!(g.dims, [160, 128, 128]);
    }

    #[test]
    fn grid_is_centred() {
        let g = solve_grid([100.0, 50.0, 70.0], [10.0, -4.0, 3.0], IDENTITY, &GridBounds::localization());
        let c = g.center();
        assert!((c[0] - 10.0).abs() < 1e-9 && (c[1] + 4.0).abs() < 1e-9 && (c[2] - 3.0).abs() < 1e-9);
    }
}
