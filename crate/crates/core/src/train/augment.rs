//! Random spatial and intensity augmentation, applied in one resampling pass.

use crate::rng::Rng;
use crate::volume::{sample, GridSpec, Interpolation, LabelVolume, Volume};

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    /// Maximum absolute rotation per axis, degrees.
    pub rotation_deg: f64,
    /// Maximum absolute translation per axis, mm.
    pub translation_mm: f64,
    /// Isotropic scale drawn log-uniformly from this range.
    pub scale_range: [f64; 2],
    /// Control points per axis of the elastic displacement grid.
    pub elastic_grid: usize,
    /// Standard deviation of control-point displacements, mm.
    pub elastic_sigma_mm: f64,
    /// Maximum absolute additive intensity shift.
    pub intensity_shift: f64,
    /// Multiplicative intensity factor drawn log-uniformly from this range.
    pub intensity_scale_range: [f64; 2],
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            translation_mm: 10.0,
            scale_range: [0.85, 1.15],
            elastic_grid: 8,
            elastic_sigma_mm: 5.0,
            intensity_shift: 0.2,
            intensity_scale_range: [0.8, 1.25],
        }
    }
}

impl AugmentParams {
    /// Every range collapsed onto the identity.
    pub fn none() -> Self {
        Self {
            rotation_deg: 0.0,
            translation_mm: 0.0,
            scale_range: [1.0, 1.0],
            elastic_grid: 8,
            elastic_sigma_mm: 0.0,
            intensity_shift: 0.0,
            intensity_scale_range: [1.0, 1.0],
        }
    }
}

fn log_uniform(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.uniform_range(lo.ln(), hi.ln()).exp()
}

/// Coarse grid of displacement vectors (mm) spanning the image index box.
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticField {
    pub points: usize,
    /// `[x, y, z]` displacement per control point, x fastest.
    pub displacements: Vec<[f64; 3]>,
}

impl ElasticField {
    /// Trilinearly interpolated displacement at voxel index `idx`.
    fn at(&self, idx: [f64; 3], dims: [usize; 3]) -> [f64; 3] {
        let g = self.points;
        let mut i0 = [0; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let u = if dims[a] > 1 { idx[a] / (dims[a] - 1) as f64 * (g - 1) as f64 } else { 0.0 };
            let u = u.clamp(0.0, (g - 1) as f64);
            i0[a] = (u.floor() as usize).min(g - 2);
            f[a] = u - i0[a] as f64;
        }
        let mut out = [0.0; 3];
        for corner in 0..8 {
            let mut w = 1.0;
            let mut k = [0; 3];
            for a in 0..3 {
                let hi = corner >> a & 1;
                k[a] = i0[a] + hi;
                w *= if hi == 1 { f[a] } else { 1.0 - f[a] };
            }
            let d = self.displacements[k[0] + g * (k[1] + g * k[2])];
            for a in 0..3 {
                out[a] += w * d[a];
            }
        }
        out
    }
}

/// Output point `p` reads the source at
/// `c + R·s·(p − c) + t + elastic(p)`, with `c` the image centre.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialTransform {
    /// Rotation angles about x, y, z in radians.
    pub rotation: [f64; 3],
    pub scale: f64,
    pub translation: [f64; 3],
    pub elastic: Option<ElasticField>,
}

impl SpatialTransform {
    pub fn identity() -> Self {
        Self { rotation: [0.0; 3], scale: 1.0, translation: [0.0; 3], elastic: None }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn random(params: &AugmentParams, rng: &mut Rng) -> Self {
        let r = params.rotation_deg.to_radians();
        let rotation = [0; 3].map(|_| rng.uniform_range(-r, r));
        let scale = log_uniform(rng, params.scale_range);
        let t = params.translation_mm;
        let translation = [0; 3].map(|_| rng.uniform_range(-t, t));
        let elastic = (params.elastic_sigma_mm > 0.0 && params.elastic_grid >= 2).then(|| {
            let n = params.elastic_grid.pow(3);
            ElasticField {
                points: params.elastic_grid,
                displacements: (0..n)
                    .map(|_| [0; 3].map(|_| rng.normal() * params.elastic_sigma_mm))
                    .collect(),
            }
        });
        // Exact zeros keep the identity short-circuit reachable.
        let clean = |v: f64| if v == 0.0 { 0.0 } else { v };
        Self {
            rotation: rotation.map(clean),
            scale,
            translation: translation.map(clean),
            elastic,
        }
    }

    fn matrix(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.rotation;
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sc, cc) = c.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
        let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
        let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
        let mul = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| {
            let mut m = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = (0..3).map(|k| p[i][k] * q[k][j]).sum::<f64>();
                }
            }
            m
        };
        let r = mul(rz, mul(ry, rx));
        r.map(|row| row.map(|v| v * self.scale))
    }

    /// Source continuous index for every voxel of `grid`, x fastest.
    fn source_indices(&self, grid: &GridSpec) -> Vec<[f64; 3]> {
        let m = self.matrix();
        let c = grid.center();
        let [nx, ny, nz] = grid.dims;
        let mut out = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let idx = [x as f64, y as f64, z as f64];
                    let p = grid.index_to_physical(idx);
                    let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                    let e = self.elastic.as_ref().map_or([0.0; 3], |f| f.at(idx, grid.dims));
                    let q = [0, 1, 2].map(|i| {
                        c[i] + m[i][0] * d[0] + m[i][1] * d[1] + m[i][2] * d[2] + self.translation[i] + e[i]
                    });
                    out.push(grid.physical_to_index(q));
                }
            }
        }
        out
    }
}

/// Resamples image (linear, `pad`) and labels (nearest, 0) through `t` in one
/// pass each, on the input grid.
pub fn apply_transform(vol: &Volume, labels: &LabelVolume, t: &SpatialTransform, pad: f32) -> (Volume, LabelVolume) {
    if t.is_identity() {
        return (vol.clone(), labels.clone());
    }
    let src = t.source_indices(vol.grid());
    let img = src.iter().map(|&c| sample(vol, c, Interpolation::Linear, pad)).collect();
    let lab = src.iter().map(|&c| sample(labels, c, Interpolation::Nearest, 0)).collect();
    (
        Volume::new(vol.grid().clone(), img).expect("same grid"),
        LabelVolume::new(labels.grid().clone(), lab).expect("same grid"),
    )
}

/// Random spatial transform, then `v·s + shift` on the image. Expects a
/// normalized image; samples from outside the source read `-1`.
pub fn augment(vol: &Volume, labels: &LabelVolume, params: &AugmentParams, rng: &mut Rng) -> (Volume, LabelVolume) {
    let t = SpatialTransform::random(params, rng);
    let shift = if params.intensity_shift > 0.0 {
        rng.uniform_range(-params.intensity_shift, params.intensity_shift)
    } else {
        0.0
    };
    let scale = log_uniform(rng, params.intensity_scale_range);
    let (img, lab) = apply_transform(vol, labels, &t, -1.0);
    if shift == 0.0 && scale == 1.0 {
        return (img, lab);
    }
    (img.map(|v| (v as f64 * scale + shift) as f32), lab)
}
