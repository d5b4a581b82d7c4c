use super::{GridSpec, Image, Voxel};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Linear,
    Nearest,
}

/// Snap distance for continuous indices that are integral up to rounding.
const SNAP: f64 = 1e-6;

/// Samples `img` at the physical position of every voxel of `target`.
///
/// Positions outside the source voxel footprint get `pad`. Integral sample
/// types (labels) always use nearest neighbour regardless of `interp`.
pub fn resample<T: Voxel>(img: &Image<T>, target: &GridSpec, interp: Interpolation, pad: T) -> Image<T> {
    let src = img.grid();
    // Continuous source index = base + cols · target index.
    let base = src.physical_to_index(target.origin);
    let mut cols = [[0.0; 3]; 3];
    for (c, col) in cols.iter_mut().enumerate() {
        let mut unit = [0.0; 3];
        unit[c] = 1.0;
        let p = target.index_to_physical(unit);
        let q = src.physical_to_index(p);
        for a in 0..3 {
            col[a] = q[a] - base[a];
        }
    }
    let [nx, ny, _] = target.dims;
    let mut out = vec![pad; target.len()];
    par::for_each_chunk_mut(&mut out, nx * ny, |z, plane| {
        for y in 0..ny {
            for x in 0..nx {
                let mut c = [0.0; 3];
                for a in 0..3 {
                    c[a] = base[a] + cols[0][a] * x as f64 + cols[1][a] * y as f64 + cols[2][a] * z as f64;
                }
                plane[x + nx * y] = sample(img, c, interp, pad);
            }
        }
    });
    Image::new(target.clone(), out).expect("target grid is valid")
}

/// Value of `img` at continuous voxel index `c` (`[x, y, z]`), or `pad` when
/// `c` falls outside the voxel footprint of the image.
pub fn sample<T: Voxel>(img: &Image<T>, c: [f64; 3], interp: Interpolation, pad: T) -> T {
    let sd = img.grid().dims;
    let c = c.map(|v| {
        let r = v.round();
        if (v - r).abs() < SNAP {
            r
        } else {
            v
        }
    });
    if (0..3).any(|a| !(c[a] >= -0.5 && c[a] < sd[a] as f64 - 0.5)) {
        return pad;
    }
    let data = img.data();
    match if T::INTEGRAL { Interpolation::Nearest } else { interp } {
        Interpolation::Nearest => {
            let i = c.map(|v| (v + 0.5).floor() as usize);
            data[i[0] + sd[0] * (i[1] + sd[1] * i[2])]
        }
        Interpolation::Linear => T::from_f64(trilinear(data, sd, c)),
    }
}

fn trilinear<T: Voxel>(data: &[T], sd: [usize; 3], c: [f64; 3]) -> f64 {
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut f = [0.0; 3];
    for a in 0..3 {
        let v = c[a].clamp(0.0, (sd[a] - 1) as f64);
        let lo = v.floor();
        i0[a] = lo as usize;
        f[a] = v - lo;
        i1[a] = if f[a] > 0.0 { i0[a] + 1 } else { i0[a] };
    }
    let at = |x: usize, y: usize, z: usize| data[x + sd[0] * (y + sd[1] * z)].to_f64();
    let mut acc = 0.0;
    for (z, wz) in [(i0[2], 1.0 - f[2]), (i1[2], f[2])] {
        if wz == 0.0 {
            continue;
        }
        for (y, wy) in [(i0[1], 1.0 - f[1]), (i1[1], f[1])] {
            if wy == 0.0 {
                continue;
            }
            for (x, wx) in [(i0[0], 1.0 - f[0]), (i1[0], f[0])] {
                if wx == 0.0 {
                    continue;
                }
                acc += wz * wy * wx * at(x, y, z);
            }
        }
    }
    acc
}
