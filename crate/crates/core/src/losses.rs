//! Generalized Dice and cross-entropy losses with analytic gradients.
//!
//! Scalars and reductions are accumulated in `f64` regardless of the tensor
//! element type; gradients come back in the tensor's own type.

use crate::error::{Error, Result};
use crate::tensor::{check_same_shape, Real, Tensor};

/// Stabilizer in the generalized Dice class weights.
pub const GDL_EPSILON: f64 = 1e-5;

/// Weights of the two cross-entropy terms in [`scn_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_local: f64,
    pub lambda_spatial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_local: 1.0, lambda_spatial: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.lambda_local) && ok(self.lambda_spatial) {
            Ok(())
        } else {
            Err(Error::InvalidSpec("loss weights must be finite and non-negative".into()))
        }
    }
}

/// `1 - 2 Σ_c w_c Σ_v g p / Σ_c w_c Σ_v (g + p)` with `w_c = 1 / (Σ_v g + ε)²`.
pub fn generalized_dice_loss<T: Real>(gt: &Tensor<T>, prob: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_same_shape(gt, prob, "generalized dice loss")?;
    let [c, ..] = gt.dims4()?;
    let v = gt.len() / c;
    let (g, p) = (gt.data(), prob.data());
    let mut w = vec![0.0; c];
    let (mut num, mut den) = (0.0, 0.0);
    for ch in 0..c {
        let r = ch * v..(ch + 1) * v;
        let gs: f64 = g[r.clone()].iter().map(|x| x.f64()).sum();
        let ps: f64 = p[r.clone()].iter().map(|x| x.f64()).sum();
        let inter: f64 = g[r.clone()].iter().zip(&p[r]).map(|(a, b)| a.f64() * b.f64()).sum();
        w[ch] = 1.0 / (gs + GDL_EPSILON).powi(2);
        num += w[ch] * inter;
        den += w[ch] * (gs + ps);
    }
    let loss = 1.0 - 2.0 * num / den;
    let mut grad = Tensor::zeros(prob.shape());
    for (i, gr) in grad.data_mut().iter_mut().enumerate() {
        let wc = w[i / v];
        *gr = T::of(-2.0 * wc * (g[i].f64() * den - num) / (den * den));
    }
    Ok((loss, grad))
}

/// Voxel-mean `-Σ_c g_c log softmax(z)_c`, computed with log-sum-exp.
pub fn cross_entropy_loss<T: Real>(gt: &Tensor<T>, logits: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check_same_shape(gt, logits, "cross entropy loss")?;
    let [c, ..] = gt.dims4()?;
    let v = gt.len() / c;
    let (g, z) = (gt.data(), logits.data());
    let n = v as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let gd = grad.data_mut();
    let mut total = 0.0;
    for i in 0..v {
        let m = (0..c).map(|ch| z[ch * v + i].f64()).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..c).map(|ch| (z[ch * v + i].f64() - m).exp()).sum();
        let lse = m + s.ln();
        let gsum: f64 = (0..c).map(|ch| g[ch * v + i].f64()).sum();
        for ch in 0..c {
            let k = ch * v + i;
            let zk = z[k].f64();
            total += g[k].f64() * (lse - zk);
            gd[k] = T::of(((zk - lse).exp() * gsum - g[k].f64()) / n);
        }
    }
    Ok((total / n, grad))
}

#[derive(Clone, Debug)]
pub struct ScnLoss<T = f32> {
    pub total: f64,
    pub dice: f64,
    pub ce_local: f64,
    pub ce_spatial: f64,
    pub grad_final: Tensor<T>,
    pub grad_local: Tensor<T>,
    pub grad_spatial: Tensor<T>,
}

/// Dice on the final probabilities plus weighted cross-entropy on both
/// pathways' logits.
pub fn scn_loss<T: Real>(
    gt: &Tensor<T>,
    final_prob: &Tensor<T>,
    local_logits: &Tensor<T>,
    spatial_logits: &Tensor<T>,
    w: LossWeights,
) -> Result<ScnLoss<T>> {
    w.validate()?;
    let (dice, grad_final) = generalized_dice_loss(gt, final_prob)?;
    let (ce_local, gl) = cross_entropy_loss(gt, local_logits)?;
    let (ce_spatial, gs) = cross_entropy_loss(gt, spatial_logits)?;
    let scale = |t: Tensor<T>, s: f64| t.map(|x| x * T::of(s));
    Ok(ScnLoss {
        total: dice + w.lambda_local * ce_local + w.lambda_spatial * ce_spatial,
        dice,
        ce_local,
        ce_spatial,
        grad_final,
        grad_local: scale(gl, w.lambda_local),
        grad_spatial: scale(gs, w.lambda_spatial),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn dice_hand_examples() {
        let gt = t(&[2, 1, 1, 2], &[1.0, 0.0, 0.0, 1.0]);
        let (l, _) = generalized_dice_loss(&gt, &t(&[2, 1, 1, 2], &[0.5; 4])).unwrap();
        assert!((l - 0.5).abs() < 1e-9, "{l}");
        let (l, _) = generalized_dice_loss(&gt, &gt).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn absent_class_stays_finite() {
        let gt = t(&[3, 1, 1, 2], &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let p = t(&[3, 1, 1, 2], &[0.6, 0.5, 0.3, 0.25, 0.1, 0.25]);
        let (l, g) = generalized_dice_loss(&gt, &p).unwrap();
        assert!(l.is_finite() && (0.0..=1.0).contains(&l));
        assert!(g.all_finite());
    }

    #[test]
    fn cross_entropy_examples() {
        let gt = t(&[5, 1, 1, 1], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let (l, _) = cross_entropy_loss(&gt, &t(&[5, 1, 1, 1], &[0.3; 5])).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
        let (l, g) = cross_entropy_loss(&gt, &t(&[5, 1, 1, 1], &[0.0, 0.0, 1000.0, 0.0, 0.0])).unwrap();
        assert!(l.abs() < 1e-12 && g.all_finite());
    }

    #[test]
    fn zero_lambdas_leave_dice() {
        let gt = t(&[2, 1, 1, 2], &[1.0, 0.0, 0.0, 1.0]);
        let p = t(&[2, 1, 1, 2], &[0.7, 0.4, 0.3, 0.6]);
        let z = t(&[2, 1, 1, 2], &[0.2, -1.0, 0.5, 2.0]);
        let w = LossWeights { lambda_local: 0.0, lambda_spatial: 0.0 };
        let s = scn_loss(&gt, &p, &z, &z, w).unwrap();
        assert_eq!(s.total, generalized_dice_loss(&gt, &p).unwrap().0);
        assert!(scn_loss(&gt, &p, &z, &z, LossWeights { lambda_local: -1.0, lambda_spatial: 0.0 }).is_err());
    }
}
