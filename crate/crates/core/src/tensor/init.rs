use super::{Real, Tensor};
use crate::rng::Rng;

/// `sqrt(2 / fan_in)` for a `[out, in, k, k, k]` weight shape.
pub fn he_std(shape: &[usize]) -> f64 {
    let fan_in: usize = shape[1..].iter().product();
    (2.0 / fan_in as f64).sqrt()
}

/// He-normal weights. Rank-1 shapes are treated as biases and come back zero.
pub fn he_init<T: Real>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    if shape.len() < 2 {
        return Tensor::zeros(shape);
    }
    let std = he_std(shape);
    Tensor::from_fn(shape, |_| T::of(rng.normal() * std))
}
