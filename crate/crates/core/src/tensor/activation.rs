use super::{debug_assert_finite, voxels, Real, Tensor};
use crate::error::{Error, Result};

pub fn leaky_relu_into<T: Real>(input: &[T], alpha: T, out: &mut [T]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = if x > T::zero() { x } else { alpha * x };
    }
}

/// Derivative is `alpha` at `x <= 0`, including zero.
pub fn leaky_relu_backward_into<T: Real>(input: &[T], grad_out: &[T], alpha: T, grad_in: &mut [T]) {
    for ((gi, &g), &x) in grad_in.iter_mut().zip(grad_out).zip(input) {
        *gi = if x > T::zero() { g } else { alpha * g };
    }
}

pub fn leaky_relu<T: Real>(input: &Tensor<T>, alpha: T) -> Tensor<T> {
    let mut out = Tensor::zeros(input.shape());
    leaky_relu_into(input.data(), alpha, out.data_mut());
    out
}

pub fn leaky_relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>, alpha: T) -> Tensor<T> {
    let mut gi = Tensor::zeros(input.shape());
    leaky_relu_backward_into(input.data(), grad_out.data(), alpha, gi.data_mut());
    gi
}

#[inline]
fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_into<T: Real>(input: &[T], out: &mut [T]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = logistic(x);
    }
}

/// Uses the forward output `y`: `dx = dy * y * (1 - y)`.
pub fn sigmoid_backward_into<T: Real>(output: &[T], grad_out: &[T], grad_in: &mut [T]) {
    for ((gi, &g), &y) in grad_in.iter_mut().zip(grad_out).zip(output) {
        *gi = g * y * (T::one() - y);
    }
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(input.shape());
    sigmoid_into(input.data(), out.data_mut());
    out
}

pub fn sigmoid_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gi = Tensor::zeros(output.shape());
    sigmoid_backward_into(output.data(), grad_out.data(), gi.data_mut());
    gi
}

/// Per-voxel softmax over the channel axis of a `[c, z, y, x]` activation.
pub fn softmax_channels_into<T: Real>(input: &[T], dims: [usize; 4], out: &mut [T]) {
    let c = dims[0];
    let v = voxels(dims);
    for i in 0..v {
        let mut m = T::neg_infinity();
        for ch in 0..c {
            m = m.max(input[ch * v + i]);
        }
        let mut s = T::zero();
        for ch in 0..c {
            let e = (input[ch * v + i] - m).exp();
            out[ch * v + i] = e;
            s += e;
        }
        for ch in 0..c {
            out[ch * v + i] = out[ch * v + i] / s;
        }
    }
    debug_assert_finite(out, "softmax");
}

/// Uses the forward output `p`: `dx_c = p_c (dy_c - sum_k dy_k p_k)`.
pub fn softmax_channels_backward_into<T: Real>(output: &[T], grad_out: &[T], dims: [usize; 4], grad_in: &mut [T]) {
    let c = dims[0];
    let v = voxels(dims);
    for i in 0..v {
        let mut dot = T::zero();
        for ch in 0..c {
            dot += grad_out[ch * v + i] * output[ch * v + i];
        }
        for ch in 0..c {
            let k = ch * v + i;
            grad_in[k] = output[k] * (grad_out[k] - dot);
        }
    }
}

pub fn softmax_channels<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let d = input.dims4()?;
    let mut out = Tensor::zeros(input.shape());
    softmax_channels_into(input.data(), d, out.data_mut());
    Ok(out)
}

pub fn softmax_channels_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let d = output.dims4()?;
    if grad_out.shape() != output.shape() {
        return Err(Error::Shape("softmax grad_out shape".into()));
    }
    let mut gi = Tensor::zeros(output.shape());
    softmax_channels_backward_into(output.data(), grad_out.data(), d, gi.data_mut());
    Ok(gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_branches() {
        let t = Tensor::new(vec![3], vec![2.0f32, -2.0, 0.0]).unwrap();
        assert_eq!(leaky_relu(&t, 0.1).data(), &[2.0, -0.2, 0.0]);
        let g = leaky_relu_backward(&t, &Tensor::filled(&[3], 1.0), 0.1);
        assert_eq!(g.data(), &[1.0, 0.1, 0.1]);
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let t = Tensor::<f64>::filled(&[5, 1, 1, 1], 3.0);
        let p = softmax_channels(&t).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let t = Tensor::new(vec![2, 1, 1, 1], vec![1000.0f32, 0.0]).unwrap();
        assert_eq!(softmax_channels(&t).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let t = Tensor::<f32>::from_fn(&[5, 2, 2, 2], |i| ((i * 37) % 11) as f32 - 5.0);
        let p = softmax_channels(&t).unwrap();
        for i in 0..8 {
            let s: f32 = (0..5).map(|c| p.data()[c * 8 + i]).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sigmoid_extremes_do_not_overflow() {
        let t = Tensor::new(vec![3], vec![-1000.0f32, 0.0, 1000.0]).unwrap();
        assert_eq!(sigmoid(&t).data(), &[0.0, 0.5, 1.0]);
    }
}
