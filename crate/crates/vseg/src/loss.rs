//! Training losses: smoothed Dice, voxel-mean binary cross-entropy, and
//! their equally weighted combination. Sums run over the entire tensor, so
//! a batch contributes one global Dice term rather than a per-sample mean.

use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Smoothing constant keeping the Dice ratio finite on empty masks.
pub const DICE_EPS: f64 = 1e-5;

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-7;

/// Weight of the Dice term in [`combined_loss`]; cross-entropy gets the rest.
pub const DICE_WEIGHT: f64 = 0.5;

fn dice_terms<E: Element>(prob: &Tensor<E>, target: &Tensor<E>) -> Result<(E, E)> {
    // Numerator 2·Σp·g + ε and denominator Σp + Σg + ε.
    let inter = prob.zip_map(target, "soft_dice_loss", |p, g| p * g)?.sum();
    let eps = E::from_f64(DICE_EPS);
    let two = E::from_f64(2.0);
    let num = two * inter + eps;
    let den = prob.sum() + target.sum() + eps;
    Ok((num, den))
}

/// Smoothed Dice loss `1 − (2·Σp·g + ε) / (Σp + Σg + ε)` with ε = 1e-5.
/// Differentiable everywhere, including empty targets.
pub fn soft_dice_loss<E: Element>(prob: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
    let (num, den) = dice_terms(prob, target)?;
    Ok(E::ONE - num / den)
}

/// Analytic gradient of [`soft_dice_loss`] with respect to each probability:
/// `(N − 2·g_i·D) / D²` where N and D are the smoothed numerator/denominator.
pub fn soft_dice_grad<E: Element>(prob: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    let (num, den) = dice_terms(prob, target)?;
    let den2 = den * den;
    let two = E::from_f64(2.0);
    target.zip_map(prob, "soft_dice_grad", |g, _| (num - two * g * den) / den2)
}

/// Voxel-mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 − 1e-7]` before the logarithms.
pub fn bce_loss<E: Element>(prob: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
    let lo = E::from_f64(BCE_CLAMP);
    let hi = E::ONE - lo;
    let per_voxel = prob.zip_map(target, "cross_entropy_loss", |p, g| {
        let p = p.max(lo).min(hi);
        -(g * p.ln() + (E::ONE - g) * (E::ONE - p).ln())
    })?;
    Ok(per_voxel.sum() * E::from_f64(1.0 / prob.len() as f64))
}

/// Analytic gradient of [`bce_loss`]. Clamped voxels get zero gradient,
/// matching the clamp's flat regions.
pub fn bce_grad<E: Element>(prob: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    let lo = E::from_f64(BCE_CLAMP);
    let hi = E::ONE - lo;
    let inv_m = E::from_f64(1.0 / prob.len() as f64);
    prob.zip_map(target, "bce_grad", |p, g| {
        if p <= lo || p >= hi {
            E::ZERO
        } else {
            (p - g) / (p * (E::ONE - p)) * inv_m
        }
    })
}

/// The training objective: `0.5·dice + 0.5·cross_entropy`.
pub fn combined_loss<E: Element>(prob: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
    let w = E::from_f64(DICE_WEIGHT);
    Ok(w * soft_dice_loss(prob, target)? + (E::ONE - w) * bce_loss(prob, target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::from_vec(Shape5::new(1, 1, 1, 1, n), data).unwrap()
    }

    #[test]
    fn dice_loss_of_exact_prediction_is_tiny() {
        let g = t(vec![1.0, 0.0, 1.0, 0.0]);
        let l = soft_dice_loss(&g, &g).unwrap();
        // N = 2·2 + ε, D = 4 + ε → loss = (D − N)/D = −ε/(4+ε) < 0 by ε-scale.
        assert!(l.abs() < 1e-5);
    }

    #[test]
    fn dice_loss_half_probabilities_half_ones() {
        let n = 8usize;
        let p = t(vec![0.5; n]);
        let mut gv = vec![0.0; n];
        for g in gv.iter_mut().take(n / 2) {
            *g = 1.0;
        }
        let g = t(gv);
        let expect = 1.0 - (n as f64 / 2.0 + DICE_EPS) / (n as f64 + DICE_EPS);
        let l = soft_dice_loss(&p, &g).unwrap();
        assert!((l - expect).abs() < 1e-15);
    }

    #[test]
    fn dice_loss_decreases_as_a_voxel_moves_toward_target() {
        let g = t(vec![1.0, 0.0, 1.0, 0.0]);
        let mut prev = f64::INFINITY;
        for step in 0..5 {
            let v = 0.5 + 0.1 * step as f64; // first foreground voxel 0.5→0.9
            let p = t(vec![v, 0.1, 0.8, 0.1]);
            let l = soft_dice_loss(&p, &g).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let p = t(vec![0.5; 6]);
        let g = t(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let l = bce_loss(&p, &g).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_of_correct_hard_prediction_is_clamp_scale() {
        let g = t(vec![1.0, 0.0]);
        let l = bce_loss(&g, &g).unwrap();
        // −ln(1 − 1e-7) ≈ 1e-7 per voxel.
        assert!(l > 0.0 && l < 2e-7);
    }

    #[test]
    fn combined_is_half_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = Tensor::rand_uniform(Shape5::new(2, 1, 2, 2, 2), 0.05, 0.95, &mut rng);
        let g = Tensor::rand_uniform(Shape5::new(2, 1, 2, 2, 2), 0.0, 1.0, &mut rng)
            .map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let c = combined_loss(&p, &g).unwrap();
        let d = soft_dice_loss(&p, &g).unwrap();
        let b = bce_loss(&p, &g).unwrap();
        assert!((c - (0.5 * d + 0.5 * b)).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = Shape5::new(1, 1, 1, 2, 4);
        let p = Tensor::rand_uniform(shape, 0.1, 0.9, &mut rng);
        let g = Tensor::rand_uniform(shape, 0.0, 1.0, &mut rng)
            .map(|v| if v > 0.4 { 1.0 } else { 0.0 });

        for (loss, grad) in [
            (
                soft_dice_loss as fn(&Tensor, &Tensor) -> Result<f64>,
                soft_dice_grad as fn(&Tensor, &Tensor) -> Result<Tensor>,
            ),
            (bce_loss, bce_grad),
        ] {
            let analytic = grad(&p, &g).unwrap();
            for i in 0..p.len() {
                let eps = 1e-6;
                let mut up = p.data().to_vec();
                let mut dn = up.clone();
                up[i] += eps;
                dn[i] -= eps;
                let lp = loss(&Tensor::from_vec(shape, up).unwrap(), &g).unwrap();
                let lm = loss(&Tensor::from_vec(shape, dn).unwrap(), &g).unwrap();
                let numeric = (lp - lm) / (2.0 * eps);
                assert!(
                    (analytic.data()[i] - numeric).abs() < 1e-6,
                    "voxel {i}: analytic {} vs numeric {numeric}",
                    analytic.data()[i]
                );
            }
        }
    }
}
