use super::Volume;
use crate::par;

/// Global intensity divisor applied before clipping to `[-1, 1]`.
pub const INTENSITY_SCALE: f32 = 2048.0;

pub fn normalize_intensities(vol: &Volume) -> Volume {
    vol.map(|v| (v / INTENSITY_SCALE).clamp(-1.0, 1.0))
}

/// Normalized 1D Gaussian truncated at `ceil(4 sigma)`; index `radius` is the
/// centre tap.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing (sigma in voxels) with edge replication.
pub fn gaussian_smooth(vol: &Volume, sigma: f64) -> Volume {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return vol.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let dims = vol.dims();
    let mut cur = vol.data().to_vec();
    for axis in 0..3 {
        cur = smooth_axis(&cur, dims, axis, &kernel);
    }
    let mut out = vol.clone();
    out.data_mut().copy_from_slice(&cur);
    out
}

fn smooth_axis(src: &[f32], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f32> {
    let [nx, ny, nz] = dims;
    let radius = (kernel.len() / 2) as isize;
    let stride = [1, nx, nx * ny][axis];
    let n = dims[axis] as isize;
    let mut out = vec![0.0f32; src.len()];
    let slice = nx * ny;
    par::for_each_chunk_mut(&mut out, slice, |z, plane| {
        for y in 0..ny {
            for x in 0..nx {
                let base = x + nx * (y + ny * z);
                let pos = [x, y, z][axis] as isize;
                let line0 = base - pos as usize * stride;
                let mut acc = 0.0f64;
                for (t, &w) in kernel.iter().enumerate() {
                    let i = (pos + t as isize - radius).clamp(0, n - 1) as usize;
                    acc += w * src[line0 + i * stride] as f64;
                }
                plane[x + nx * y] = acc as f32;
            }
        }
    });
    let _ = nz;
    out
}
