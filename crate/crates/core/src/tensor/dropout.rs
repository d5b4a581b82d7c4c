//! Inverted dropout: survivors are scaled by `1 / (1 - rate)` during training so
//! inference is the identity.

use super::{Real, Tensor};
use crate::rng::Rng;

/// Per-element multipliers, either `0` or `1 / (1 - rate)`.
pub fn dropout_mask<T: Real>(len: usize, rate: f64, rng: &mut Rng) -> Vec<T> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if rate == 0.0 {
        return vec![T::one(); len];
    }
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
        .collect()
}

#[derive(Clone, Debug)]
pub enum Dropout<T> {
    Inference,
    Training { mask: Vec<T> },
}

pub fn dropout<T: Real>(input: &Tensor<T>, rate: f64, rng: &mut Rng, training: bool) -> (Tensor<T>, Dropout<T>) {
    if !training || rate == 0.0 {
        return (input.clone(), Dropout::Inference);
    }
    let mask = dropout_mask(input.len(), rate, rng);
    let mut out = input.clone();
    out.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
    (out, Dropout::Training { mask })
}

pub fn dropout_backward<T: Real>(grad_out: &Tensor<T>, state: &Dropout<T>) -> Tensor<T> {
    match state {
        Dropout::Inference => grad_out.clone(),
        Dropout::Training { mask } => {
            let mut g = grad_out.clone();
            g.data_mut().iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
            g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_and_zero_rate_are_identity() {
        let t = Tensor::<f32>::from_fn(&[100], |i| i as f32);
        let mut rng = Rng::new(0);
        assert_eq!(dropout(&t, 0.1, &mut rng, false).0, t);
        assert_eq!(dropout(&t, 0.0, &mut rng, true).0, t);
    }

    #[test]
    fn survivor_fraction_and_mean() {
        let n = 1_000_000;
        let t = Tensor::<f64>::filled(&[n], 1.0);
        let mut rng = Rng::new(2024);
        let (out, _) = dropout(&t, 0.1, &mut rng, true);
        let survivors = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((0.897..=0.903).contains(&survivors), "{survivors}");
        let mean = out.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }
}
