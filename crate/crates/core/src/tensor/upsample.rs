//! ×2 trilinear upsampling, half-voxel aligned with edge clamping.
//!
//! Output index `i` samples the source at `(i + 0.5) / 2 - 0.5`, so even outputs
//! mix `j - 1` and `j` with weights `1/4, 3/4` and odd outputs mix `j` and
//! `j + 1` with `3/4, 1/4`.

use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w0: T,
    w1: T,
}

fn taps<T: Real>(n: usize) -> Vec<Tap<T>> {
    let (q, tq) = (T::of(0.25), T::of(0.75));
    (0..2 * n)
        .map(|i| {
            let j = i / 2;
            if i % 2 == 0 {
                Tap { i0: j.saturating_sub(1), i1: j, w0: q, w1: tq }
            } else {
                Tap { i0: j, i1: (j + 1).min(n - 1), w0: tq, w1: q }
            }
        })
        .collect()
}

/// `dims` is the input `[c, z, y, x]`.
pub fn upsample_trilinear_into<T: Real>(input: &[T], dims: [usize; 4], out: &mut [T]) {
    let [c, nz, ny, nx] = dims;
    let (oz, oy, ox) = (2 * nz, 2 * ny, 2 * nx);
    let vin = nz * ny * nx;
    let vout = oz * oy * ox;
    assert_eq!(input.len(), c * vin);
    assert_eq!(out.len(), c * vout);
    let (tz, ty, tx) = (taps::<T>(nz), taps::<T>(ny), taps::<T>(nx));
    par::for_each_chunk_mut(out, vout, |ch, o| {
        let src = &input[ch * vin..(ch + 1) * vin];
        let at = |z: usize, y: usize, x: usize| src[(z * ny + y) * nx + x];
        for (z, a) in tz.iter().enumerate() {
            for (y, b) in ty.iter().enumerate() {
                for (x, cx) in tx.iter().enumerate() {
                    let line = |zz: usize, yy: usize| at(zz, yy, cx.i0) * cx.w0 + at(zz, yy, cx.i1) * cx.w1;
                    let plane = |zz: usize| line(zz, b.i0) * b.w0 + line(zz, b.i1) * b.w1;
                    o[(z * oy + y) * ox + x] = plane(a.i0) * a.w0 + plane(a.i1) * a.w1;
                }
            }
        }
    });
}

/// Transpose of [`upsample_trilinear_into`]; `in_dims` is the forward input shape.
pub fn upsample_trilinear_backward_into<T: Real>(grad_out: &[T], in_dims: [usize; 4], grad_in: &mut [T]) {
    let [c, nz, ny, nx] = in_dims;
    let (oz, oy, ox) = (2 * nz, 2 * ny, 2 * nx);
    let vin = nz * ny * nx;
    let vout = oz * oy * ox;
    assert_eq!(grad_out.len(), c * vout);
    assert_eq!(grad_in.len(), c * vin);
    let (tz, ty, tx) = (taps::<T>(nz), taps::<T>(ny), taps::<T>(nx));
    par::for_each_chunk_mut(grad_in, vin, |ch, gi| {
        gi.fill(T::zero());
        let go = &grad_out[ch * vout..(ch + 1) * vout];
        for (z, a) in tz.iter().enumerate() {
            for (y, b) in ty.iter().enumerate() {
                for (x, cx) in tx.iter().enumerate() {
                    let g = go[(z * oy + y) * ox + x];
                    for (zz, wz) in [(a.i0, a.w0), (a.i1, a.w1)] {
                        for (yy, wy) in [(b.i0, b.w0), (b.i1, b.w1)] {
                            let row = (zz * ny + yy) * nx;
                            gi[row + cx.i0] += g * wz * wy * cx.w0;
                            gi[row + cx.i1] += g * wz * wy * cx.w1;
                        }
                    }
                }
            }
        }
    });
}

pub fn upsample_trilinear<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let d = input.dims4()?;
    let mut out = Tensor::zeros(&[d[0], 2 * d[1], 2 * d[2], 2 * d[3]]);
    upsample_trilinear_into(input.data(), d, out.data_mut());
    Ok(out)
}

pub fn upsample_trilinear_backward<T: Real>(grad_out: &Tensor<T>, in_shape: &[usize]) -> Result<Tensor<T>> {
    let d: [usize; 4] = in_shape
        .try_into()
        .map_err(|_| Error::Shape(format!("upsample input shape {in_shape:?}")))?;
    if grad_out.shape() != [d[0], 2 * d[1], 2 * d[2], 2 * d[3]] {
        return Err(Error::Shape("upsample grad_out shape".into()));
    }
    let mut gi = Tensor::zeros(in_shape);
    upsample_trilinear_backward_into(grad_out.data(), d, gi.data_mut());
    Ok(gi)
}
