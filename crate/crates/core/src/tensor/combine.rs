use super::{check_same_shape, Real, Tensor};
use crate::error::{Error, Result};

/// Channel stacking is a plain append because channels are the outermost axis.
pub fn concat_into<T: Real>(a: &[T], b: &[T], out: &mut [T]) {
    out[..a.len()].copy_from_slice(a);
    out[a.len()..].copy_from_slice(b);
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let da = a.dims4()?;
    let db = b.dims4()?;
    if da[1..] != db[1..] {
        return Err(Error::Shape(format!(
            "concat needs equal spatial dims, got {:?} and {:?}",
            &da[1..],
            &db[1..]
        )));
    }
    let mut out = Tensor::zeros(&[da[0] + db[0], da[1], da[2], da[3]]);
    concat_into(a.data(), b.data(), out.data_mut());
    Ok(out)
}

/// Splits the output gradient back into the two inputs' channel ranges.
pub fn concat_channels_backward<T: Real>(grad_out: &Tensor<T>, a_channels: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = grad_out.dims4()?;
    if a_channels == 0 || a_channels >= d[0] {
        return Err(Error::Shape("concat split point".into()));
    }
    let split = a_channels * d[1] * d[2] * d[3];
    let (ga, gb) = grad_out.data().split_at(split);
    Ok((
        Tensor::new(vec![a_channels, d[1], d[2], d[3]], ga.to_vec())?,
        Tensor::new(vec![d[0] - a_channels, d[1], d[2], d[3]], gb.to_vec())?,
    ))
}

pub fn mul_into<T: Real>(a: &[T], b: &[T], out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x * y;
    }
}

pub fn elementwise_mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(a, b, "elementwise_mul")?;
    let mut out = Tensor::zeros(a.shape());
    mul_into(a.data(), b.data(), out.data_mut());
    Ok(out)
}

pub fn elementwise_mul_backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    check_same_shape(a, b, "elementwise_mul backward")?;
    check_same_shape(a, grad_out, "elementwise_mul backward")?;
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(a.shape());
    mul_into(grad_out.data(), b.data(), ga.data_mut());
    mul_into(grad_out.data(), a.data(), gb.data_mut());
    Ok((ga, gb))
}
