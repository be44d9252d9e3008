//! Binary focal loss over probability series.

use super::tensor::Real;
use super::NnError;

pub const PROB_CLAMP: f64 = 1e-7;

/// Focal loss parameters. `alpha` scales every sample uniformly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.5,
            alpha: 0.25,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.gamma >= 0.0) || !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(NnError::ShapeMismatch(format!(
                "invalid focal loss config gamma={} alpha={}",
                self.gamma, self.alpha
            )));
        }
        Ok(())
    }
}

/// Loss and derivative with respect to `p` for a single sample.
fn focal_point(p: f64, positive: bool, cfg: &LossConfig) -> (f64, f64) {
    let lo = PROB_CLAMP;
    let hi = 1.0 - PROB_CLAMP;
    let clamped = !(lo..=hi).contains(&p);
    let p = p.clamp(lo, hi);
    // Work with p_t, the probability assigned to the true class.
    let (pt, dpt_dp) = if positive { (p, 1.0) } else { (1.0 - p, -1.0) };
    let q = 1.0 - pt;
    let g = cfg.gamma;
    let log_pt = pt.ln();
    let loss = -cfg.alpha * q.powf(g) * log_pt;
    if clamped {
        return (loss, 0.0);
    }
    // d/dpt [-(1-pt)^g ln pt] = g (1-pt)^(g-1) ln pt - (1-pt)^g / pt
    let d_pt = if g == 0.0 {
        -1.0 / pt
    } else {
        g * q.powf(g - 1.0) * log_pt - q.powf(g) / pt
    };
    (loss, cfg.alpha * d_pt * dpt_dp)
}

/// Mean focal loss over masked samples and its gradient with respect to
/// `probs`. Unmasked samples receive zero gradient. Labels are positive when
/// `>= 0.5`.
pub fn focal_loss<T: Real>(
    probs: &[T],
    labels: &[T],
    mask: &[bool],
    cfg: &LossConfig,
) -> Result<(f64, Vec<T>), NnError> {
    if probs.len() != labels.len() || probs.len() != mask.len() {
        return Err(NnError::ShapeMismatch(format!(
            "focal loss over {} probabilities, {} labels, {} mask entries",
            probs.len(),
            labels.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|m| **m).count();
    let mut grad = vec![T::zero(); probs.len()];
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for i in 0..probs.len() {
        if !mask[i] {
            continue;
        }
        let positive = labels[i].as_f64() >= 0.5;
        let (l, d) = focal_point(probs[i].as_f64(), positive, cfg);
        total += l;
        grad[i] = T::from_f64_lossy(d * inv);
    }
    Ok((total * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confident_positive_has_negligible_loss() {
        let cfg = LossConfig::default();
        let (l, _) = focal_loss(&[1.0 - 1e-7f64], &[1.0], &[true], &cfg).unwrap();
        assert!(l <= 1e-6 * cfg.alpha);
    }

    #[test]
    fn masked_samples_get_zero_gradient() {
        let cfg = LossConfig::default();
        let (_, g) = focal_loss(&[0.3f64, 0.6, 0.2], &[1.0, 0.0, 0.0], &[true, false, true], &cfg).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(g[0] != 0.0 && g[2] != 0.0);
    }

    #[test]
    fn empty_mask_gives_zero_loss() {
        let (l, g) = focal_loss(&[0.3f64], &[1.0], &[false], &LossConfig::default()).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(focal_loss(&[0.3f64, 0.1], &[1.0], &[true, true], &LossConfig::default()).is_err());
    }

    #[test]
    fn focusing_downweights_easy_negatives() {
        let bce = LossConfig { gamma: 0.0, alpha: 1.0 };
        let focal = LossConfig { gamma: 2.5, alpha: 1.0 };
        let (lb, _) = focal_loss(&[0.05f64], &[0.0], &[true], &bce).unwrap();
        let (lf, _) = focal_loss(&[0.05f64], &[0.0], &[true], &focal).unwrap();
        assert!(lf < lb * 1e-2);
    }
}
