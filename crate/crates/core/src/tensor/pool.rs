//! 2×2×2 average pooling.

use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// `dims` is the input `[c, z, y, x]`; all spatial extents must be even.
pub fn avg_pool3d_into<T: Real>(input: &[T], dims: [usize; 4], out: &mut [T]) {
    let [c, nz, ny, nx] = dims;
    let (oz, oy, ox) = (nz / 2, ny / 2, nx / 2);
    let vin = nz * ny * nx;
    let vout = oz * oy * ox;
    assert_eq!(input.len(), c * vin);
    assert_eq!(out.len(), c * vout);
    let eighth = T::of(0.125);
    par::for_each_chunk_mut(out, vout, |ch, o| {
        let inp = &input[ch * vin..(ch + 1) * vin];
        for z in 0..oz {
            for y in 0..oy {
                for x in 0..ox {
                    let mut s = T::zero();
                    for dz in 0..2 {
                        for dy in 0..2 {
                            let row = ((2 * z + dz) * ny + 2 * y + dy) * nx + 2 * x;
                            s += inp[row];
                            s += inp[row + 1];
                        }
                    }
                    o[(z * oy + y) * ox + x] = s * eighth;
                }
            }
        }
    });
}

/// Spreads each output gradient uniformly (÷8) over its block.
pub fn avg_pool3d_backward_into<T: Real>(grad_out: &[T], in_dims: [usize; 4], grad_in: &mut [T]) {
    let [c, nz, ny, nx] = in_dims;
    let (oz, oy, ox) = (nz / 2, ny / 2, nx / 2);
    let vin = nz * ny * nx;
    let vout = oz * oy * ox;
    assert_eq!(grad_out.len(), c * vout);
    assert_eq!(grad_in.len(), c * vin);
    let eighth = T::of(0.125);
    par::for_each_chunk_mut(grad_in, vin, |ch, gi| {
        let go = &grad_out[ch * vout..(ch + 1) * vout];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    gi[(z * ny + y) * nx + x] = go[((z / 2) * oy + y / 2) * ox + x / 2] * eighth;
                }
            }
        }
    });
}

fn check_even(dims: [usize; 4]) -> Result<()> {
    if dims[1..].iter().any(|d| d % 2 != 0) {
        return Err(Error::Shape(format!(
            "average pooling needs even spatial dims, got {:?}",
            &dims[1..]
        )));
    }
    Ok(())
}

pub fn avg_pool3d<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let d = input.dims4()?;
    check_even(d)?;
    let mut out = Tensor::zeros(&[d[0], d[1] / 2, d[2] / 2, d[3] / 2]);
    avg_pool3d_into(input.data(), d, out.data_mut());
    Ok(out)
}

pub fn avg_pool3d_backward<T: Real>(grad_out: &Tensor<T>, in_shape: &[usize]) -> Result<Tensor<T>> {
    let d: [usize; 4] = in_shape
        .try_into()
        .map_err(|_| Error::Shape(format!("pool input shape {in_shape:?}")))?;
    check_even(d)?;
    if grad_out.shape() != [d[0], d[1] / 2, d[2] / 2, d[3] / 2] {
        return Err(Error::Shape("pool grad_out shape".into()));
    }
    let mut gi = Tensor::zeros(in_shape);
    avg_pool3d_backward_into(grad_out.data(), d, gi.data_mut());
    Ok(gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::<f32>::filled(&[2, 4, 4, 4], 1.75);
        let p = avg_pool3d(&t).unwrap();
        assert_eq!(p.shape(), &[2, 2, 2, 2]);
        assert!(p.data().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn single_block_mean() {
        let t = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f32);
        assert_eq!(avg_pool3d(&t).unwrap().data(), &[3.5]);
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(avg_pool3d(&Tensor::<f32>::zeros(&[1, 3, 2, 2])).is_err());
    }
}
