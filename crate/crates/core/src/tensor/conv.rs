//! 3D cross-correlation with zero padding `k / 2` and stride 1.

use super::{debug_assert_finite, Real, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd cubic kernel edge length.
    pub kernel: usize,
    /// Spatial `[z, y, x]`.
    pub dims: [usize; 3],
}

impl ConvGeometry {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn taps(&self) -> usize {
        self.kernel.pow(3)
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.taps()
    }

    fn offset(&self, k: usize) -> isize {
        k as isize - (self.kernel / 2) as isize
    }
}

/// Output positions `[lo, hi)` along an axis of length `n` whose source `i + d`
/// stays inside the input.
#[inline]
fn valid(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

#[inline]
fn shift(i: usize, d: isize) -> usize {
    (i as isize + d) as usize
}

pub fn conv3d_forward_into<T: Real>(
    input: &[T],
    weights: &[T],
    bias: &[T],
    g: ConvGeometry,
    out: &mut [T],
) {
    let v = g.voxels();
    let k = g.kernel;
    let per_out = g.in_channels * g.taps();
    assert_eq!(input.len(), g.in_channels * v, "conv input length");
    assert_eq!(weights.len(), g.weight_len(), "conv weight length");
    assert_eq!(bias.len(), g.out_channels, "conv bias length");
    assert_eq!(out.len(), g.out_channels * v, "conv output length");
    let [nz, ny, nx] = g.dims;

    par::for_each_chunk_mut(out, v, |co, out_c| {
        out_c.fill(bias[co]);
        let w_co = &weights[co * per_out..(co + 1) * per_out];
        for ci in 0..g.in_channels {
            let inp = &input[ci * v..(ci + 1) * v];
            for kz in 0..k {
                let dz = g.offset(kz);
                let (z0, z1) = valid(dz, nz);
                for ky in 0..k {
                    let dy = g.offset(ky);
                    let (y0, y1) = valid(dy, ny);
                    let wrow = &w_co[((ci * k + kz) * k + ky) * k..][..k];
                    for z in z0..z1 {
                        for y in y0..y1 {
                            let orow = &mut out_c[(z * ny + y) * nx..][..nx];
                            let irow = &inp[(shift(z, dz) * ny + shift(y, dy)) * nx..][..nx];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                let dx = g.offset(kx);
                                let (x0, x1) = valid(dx, nx);
                                if x0 == x1 {
                                    continue;
                                }
                                let src = &irow[shift(x0, dx)..shift(x1, dx)];
                                for (o, &s) in orow[x0..x1].iter_mut().zip(src) {
                                    *o += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    debug_assert_finite(out, "conv3d forward");
}

/// Gradient with respect to the convolution input.
pub fn conv3d_backward_input_into<T: Real>(
    grad_out: &[T],
    weights: &[T],
    g: ConvGeometry,
    grad_in: &mut [T],
) {
    let v = g.voxels();
    let k = g.kernel;
    let per_out = g.in_channels * g.taps();
    assert_eq!(grad_out.len(), g.out_channels * v, "conv grad_out length");
    assert_eq!(grad_in.len(), g.in_channels * v, "conv grad_in length");
    let [nz, ny, nx] = g.dims;

    par::for_each_chunk_mut(grad_in, v, |ci, gin| {
        gin.fill(T::zero());
        for co in 0..g.out_channels {
            let go = &grad_out[co * v..(co + 1) * v];
            let w_co = &weights[co * per_out..(co + 1) * per_out];
            for kz in 0..k {
                let dz = g.offset(kz);
                let (z0, z1) = valid(dz, nz);
                for ky in 0..k {
                    let dy = g.offset(ky);
                    let (y0, y1) = valid(dy, ny);
                    let wrow = &w_co[((ci * k + kz) * k + ky) * k..][..k];
                    for z in z0..z1 {
                        for y in y0..y1 {
                            let gorow = &go[(z * ny + y) * nx..][..nx];
                            let girow = &mut gin[(shift(z, dz) * ny + shift(y, dy)) * nx..][..nx];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                let dx = g.offset(kx);
                                let (x0, x1) = valid(dx, nx);
                                if x0 == x1 {
                                    continue;
                                }
                                let dst = &mut girow[shift(x0, dx)..shift(x1, dx)];
                                for (d, &s) in dst.iter_mut().zip(&gorow[x0..x1]) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    debug_assert_finite(grad_in, "conv3d backward (input)");
}

/// Dot product with eight independent partial sums so it vectorizes; the
/// summation order is fixed, so results stay deterministic.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Gradients with respect to weights and bias.
pub fn conv3d_backward_params<T: Real>(
    input: &[T],
    grad_out: &[T],
    g: ConvGeometry,
) -> (Vec<T>, Vec<T>) {
    let v = g.voxels();
    let k = g.kernel;
    let per_out = g.in_channels * g.taps();
    let [nz, ny, nx] = g.dims;
    let mut gw = vec![T::zero(); g.weight_len()];

    par::for_each_chunk_mut(&mut gw, per_out, |co, gw_co| {
        let go = &grad_out[co * v..(co + 1) * v];
        for ci in 0..g.in_channels {
            let inp = &input[ci * v..(ci + 1) * v];
            for kz in 0..k {
                let dz = g.offset(kz);
                let (z0, z1) = valid(dz, nz);
                for ky in 0..k {
                    let dy = g.offset(ky);
                    let (y0, y1) = valid(dy, ny);
                    let acc = &mut gw_co[((ci * k + kz) * k + ky) * k..][..k];
                    for z in z0..z1 {
                        for y in y0..y1 {
                            let gorow = &go[(z * ny + y) * nx..][..nx];
                            let irow = &inp[(shift(z, dz) * ny + shift(y, dy)) * nx..][..nx];
                            for (kx, a) in acc.iter_mut().enumerate() {
                                let dx = g.offset(kx);
                                let (x0, x1) = valid(dx, nx);
                                if x0 == x1 {
                                    continue;
                                }
                                *a += dot(&gorow[x0..x1], &irow[shift(x0, dx)..shift(x1, dx)]);
                            }
                        }
                    }
                }
            }
        }
    });
    let gb = (0..g.out_channels)
        .map(|co| grad_out[co * v..(co + 1) * v].iter().copied().sum())
        .collect();
    debug_assert_finite(&gw, "conv3d backward (weights)");
    (gw, gb)
}

fn geometry<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<ConvGeometry> {
    let [c, z, y, x] = input.dims4()?;
    let (co, ci, k) = match weights.shape() {
        &[co, ci, kz, ky, kx] if kz == ky && ky == kx && kz % 2 == 1 => (co, ci, kz),
        s => {
            return Err(Error::Shape(format!(
                "conv weights must be [out, in, k, k, k] with odd k, got {s:?}"
            )))
        }
    };
    if ci != c {
        return Err(Error::Shape(format!(
            "conv expects {ci} input channels, input has {c}"
        )));
    }
    if bias.shape() != [co] {
        return Err(Error::Shape(format!(
            "conv bias must be [{co}], got {:?}",
            bias.shape()
        )));
    }
    Ok(ConvGeometry {
        in_channels: ci,
        out_channels: co,
        kernel: k,
        dims: [z, y, x],
    })
}

pub fn conv3d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = geometry(input, weights, bias)?;
    let mut out = Tensor::zeros(&[g.out_channels, g.dims[0], g.dims[1], g.dims[2]]);
    conv3d_forward_into(input.data(), weights.data(), bias.data(), g, out.data_mut());
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv3d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let co = weights.shape()[0];
    let g = geometry(input, weights, &Tensor::zeros(&[co]))?;
    if grad_out.shape() != [co, g.dims[0], g.dims[1], g.dims[2]] {
        return Err(Error::Shape(format!(
            "conv grad_out shape {:?} does not match output",
            grad_out.shape()
        )));
    }
    let mut gin = Tensor::zeros(input.shape());
    conv3d_backward_input_into(grad_out.data(), weights.data(), g, gin.data_mut());
    let (gw, gb) = conv3d_backward_params(input.data(), grad_out.data(), g);
    Ok(ConvGrads {
        input: gin,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![co], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_voxel_only_center_tap_contributes() {
        let input = Tensor::new(vec![1, 1, 1, 1], vec![3.0f64]).unwrap();
        let w = Tensor::from_fn(&[1, 1, 3, 3, 3], |i| i as f64 + 1.0);
        let b = Tensor::new(vec![1], vec![0.5]).unwrap();
        let out = conv3d(&input, &w, &b).unwrap();
        assert_eq!(out.data(), &[14.0 * 3.0 + 0.5]);
    }

    #[test]
    fn impulse_imprints_kernel_in_correlation_orientation() {
        // Direct cross-correlation oracle: out[p] = sum_t w[t] * in[p + t - 1].
        let n = 5;
        let mut input = Tensor::<f64>::zeros(&[1, n, n, n]);
        input.data_mut()[(2 * n + 2) * n + 2] = 1.0;
        let w = Tensor::from_fn(&[1, 1, 3, 3, 3], |i| (i as f64) * 0.5 - 3.0);
        let out = conv3d(&input, &w, &Tensor::zeros(&[1])).unwrap();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let mut expect = 0.0;
                    for kz in 0..3 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sz, sy, sx) = (z + kz, y + ky, x + kx);
                                if (1..=n).contains(&sz) && (1..=n).contains(&sy) && (1..=n).contains(&sx) {
                                    let v = input.data()[((sz - 1) * n + sy - 1) * n + sx - 1];
                                    expect += w.data()[(kz * 3 + ky) * 3 + kx] * v;
                                }
                            }
                        }
                    }
                    assert_eq!(out.data()[(z * n + y) * n + x], expect);
                }
            }
        }
        // Around the impulse the kernel appears flipped: out[c - t + 1] = w[t].
        assert_eq!(out.data()[(n + 1) * n + 1], w.data()[26]);
        assert_eq!(out.data()[(3 * n + 3) * n + 3], w.data()[0]);
    }

    #[test]
    fn zero_input_gives_bias_broadcast() {
        let input = Tensor::<f32>::zeros(&[3, 4, 4, 4]);
        let w = Tensor::from_fn(&[2, 3, 3, 3, 3], |i| (i as f32).sin());
        let b = Tensor::new(vec![2], vec![0.25, -1.5]).unwrap();
        let out = conv3d(&input, &w, &b).unwrap();
        assert!(out.channel(0).iter().all(|&v| v == 0.25));
        assert!(out.channel(1).iter().all(|&v| v == -1.5));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let input = Tensor::<f32>::zeros(&[2, 4, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3, 3]);
        assert!(conv3d(&input, &w, &Tensor::zeros(&[1])).is_err());
        let w = Tensor::zeros(&[1, 2, 2, 2, 2]);
        assert!(conv3d(&input, &w, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn kernel_wider_than_the_volume() {
        // 5³ kernel on a 1×1×2 volume: only taps landing inside contribute.
        let input = Tensor::new(vec![1, 1, 1, 2], vec![2.0f64, 3.0]).unwrap();
        let w = Tensor::from_fn(&[1, 1, 5, 5, 5], |i| i as f64);
        let out = conv3d(&input, &w, &Tensor::zeros(&[1])).unwrap();
        // Centre tap index 62; x neighbours 61 and 63.
        assert_eq!(out.data(), &[62.0 * 2.0 + 63.0 * 3.0, 61.0 * 2.0 + 62.0 * 3.0]);
        let g = conv3d_backward(&input, &w, &Tensor::new(vec![1, 1, 1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(g.input.data(), &[62.0 + 61.0, 63.0 + 62.0]);
        assert_eq!(g.weights.data()[61], 2.0);
        assert_eq!(g.weights.data()[63], 3.0);
        assert_eq!(g.weights.data()[62], 5.0);
    }
}
