use crate::layers::sigmoid_scalar;
use crate::tensor::{Backward, Element, Tape, Tensor};

use super::{Label, MetricsError};

/// Clamp applied to probabilities before the logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalLossConfig {
    pub gamma: f64,
    pub alpha_genuine: f64,
    pub alpha_spoof: f64,
}

impl FocalLossConfig {
    /// `α_spoof = 1 − α_genuine`.
    pub fn new(gamma: f64, alpha_genuine: f64) -> Result<Self, MetricsError> {
        if !(alpha_genuine > 0.0 && alpha_genuine < 1.0) {
            return Err(MetricsError::InvalidParams(format!(
                "alpha_genuine {alpha_genuine} must lie in (0, 1)"
            )));
        }
        Self::weighted(gamma, alpha_genuine, 1.0 - alpha_genuine)
    }

    /// Both classes weighted 1.
    pub fn unweighted(gamma: f64) -> Result<Self, MetricsError> {
        Self::weighted(gamma, 1.0, 1.0)
    }

    pub fn weighted(gamma: f64, alpha_genuine: f64, alpha_spoof: f64) -> Result<Self, MetricsError> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(MetricsError::InvalidParams(format!("gamma {gamma} must be finite and >= 0")));
        }
        for a in [alpha_genuine, alpha_spoof] {
            if !(a.is_finite() && a > 0.0) {
                return Err(MetricsError::InvalidParams(format!("class weight {a} must be positive")));
            }
        }
        Ok(FocalLossConfig {
            gamma,
            alpha_genuine,
            alpha_spoof,
        })
    }

    fn alpha(&self, label: Label) -> f64 {
        match label {
            Label::Genuine => self.alpha_genuine,
            Label::Spoof => self.alpha_spoof,
        }
    }
}

/// `n_spoof / (n_genuine + n_spoof)`: the rarer class gets the larger weight.
pub fn alpha_from_counts(n_genuine: usize, n_spoof: usize) -> Result<f64, MetricsError> {
    if n_genuine == 0 || n_spoof == 0 {
        return Err(MetricsError::SingleClass {
            genuine: n_genuine,
            spoof: n_spoof,
        });
    }
    Ok(n_spoof as f64 / (n_genuine + n_spoof) as f64)
}

fn p_true(p_genuine: f64, label: Label) -> f64 {
    match label {
        Label::Genuine => p_genuine,
        Label::Spoof => 1.0 - p_genuine,
    }
}

fn item_loss(pt: f64, alpha: f64, gamma: f64) -> f64 {
    let pt = pt.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -alpha * (1.0 - pt).powf(gamma) * pt.ln()
}

fn check_len(n: usize, labels: &[Label]) -> Result<(), MetricsError> {
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    if labels.len() != n {
        return Err(MetricsError::LengthMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    Ok(())
}

/// Mean of `−α_t (1 − p_t)^γ ln p_t`, where `p` is the probability of the
/// genuine class and `p_t` is the probability of the true class.
pub fn focal_loss(p: &[f64], labels: &[Label], cfg: &FocalLossConfig) -> Result<f64, MetricsError> {
    check_len(p.len(), labels)?;
    let total: f64 = p
        .iter()
        .zip(labels)
        .map(|(&p, &y)| item_loss(p_true(p, y), cfg.alpha(y), cfg.gamma))
        .sum();
    Ok(total / p.len() as f64)
}

/// Focal loss on logits (`p = σ(z)`), recorded on the tape. Returns a
/// scalar.
pub fn focal_loss_with_logits<T: Element>(
    tape: &mut Tape<T>,
    logits: &Tensor<T>,
    labels: &[Label],
    cfg: &FocalLossConfig,
) -> Result<Tensor<T>, MetricsError> {
    let n = logits.numel();
    check_len(n, labels)?;
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut dz = Vec::with_capacity(n);
    for (&z, &y) in logits.data().iter().zip(labels) {
        let z = z.as_f64();
        if !z.is_finite() {
            return Err(MetricsError::NonFinite(z));
        }
        let sign = if y == Label::Genuine { 1.0 } else { -1.0 };
        let pt = sigmoid_scalar(sign * z);
        let (alpha, gamma) = (cfg.alpha(y), cfg.gamma);
        total += item_loss(pt, alpha, gamma);
        let g = if pt < PROB_EPS || pt > 1.0 - PROB_EPS {
            0.0
        } else {
            alpha * sign * (1.0 - pt).powf(gamma) * (gamma * pt * pt.ln() - (1.0 - pt))
        };
        dz.push(T::lit(g * inv_n));
    }
    let value = Tensor::scalar(T::lit(total * inv_n));
    Ok(tape.record(value, &[logits], FocalBackward { dz }))
}

struct FocalBackward<T> {
    dz: Vec<T>,
}

impl<T: Element> Backward<T> for FocalBackward<T> {
    fn name(&self) -> &'static str {
        "focal_loss"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(self.dz.iter().map(|&d| d * grad[0]).collect())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_at, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn hand_values() {
        let ce = FocalLossConfig::unweighted(0.0).unwrap();
        let focal = FocalLossConfig::unweighted(2.0).unwrap();
        assert!((focal_loss(&[0.5], &[Label::Genuine], &ce).unwrap() - LN2).abs() < 1e-12);
        assert!((focal_loss(&[0.5], &[Label::Spoof], &focal).unwrap() - 0.25 * LN2).abs() < 1e-12);
        assert!(focal_loss(&[1.0 - 1e-12], &[Label::Genuine], &focal).unwrap() < 1e-15);
    }

    #[test]
    fn cross_entropy_limit() {
        let cfg = FocalLossConfig::unweighted(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p: f64 = rng.gen_range(0.001..0.999);
            let y = if rng.gen_bool(0.5) { Label::Genuine } else { Label::Spoof };
            let bce = if y == Label::Genuine { -p.ln() } else { -(1.0 - p).ln() };
            assert!((focal_loss(&[p], &[y], &cfg).unwrap() - bce).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_mapping() {
        assert!((alpha_from_counts(2580, 22800).unwrap() - 0.8983).abs() < 1e-4);
        assert_eq!(alpha_from_counts(1, 1).unwrap(), 0.5);
        assert_eq!(alpha_from_counts(1, 3).unwrap(), 0.75);
        assert!(alpha_from_counts(0, 3).is_err());
        let cfg = FocalLossConfig::new(2.0, 0.75).unwrap();
        assert_eq!(cfg.alpha_spoof, 0.25);
        assert!(FocalLossConfig::new(2.0, 1.0).is_err());
        assert!(FocalLossConfig::new(-1.0, 0.5).is_err());
    }

    #[test]
    fn contract_errors() {
        let cfg = FocalLossConfig::unweighted(2.0).unwrap();
        assert_eq!(focal_loss(&[], &[], &cfg), Err(MetricsError::Empty));
        assert!(matches!(focal_loss(&[0.5], &[], &cfg), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn logits_agree_with_probabilities() {
        let cfg = FocalLossConfig::new(2.0, 0.3).unwrap();
        let z = [-3.0, -0.2, 0.0, 1.7, 6.0];
        let y = [Label::Genuine, Label::Spoof, Label::Genuine, Label::Spoof, Label::Genuine];
        let p: Vec<f64> = z.iter().map(|&v| sigmoid_scalar(v)).collect();
        let logits = Tensor::from_vec((5, 1, 1), z.to_vec()).unwrap();
        let a = focal_loss_with_logits(&mut Tape::inference(), &logits, &y, &cfg).unwrap();
        let b = focal_loss(&p, &y, &cfg).unwrap();
        assert!((a.item().unwrap() - b).abs() < 1e-12);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        for gamma in [0.0, 2.0] {
            let cfg = FocalLossConfig::new(gamma, 0.6).unwrap();
            for p in [0.01_f64, 0.5, 0.99] {
                for y in [Label::Genuine, Label::Spoof] {
                    let z = (p / (1.0 - p)).ln();
                    let x = Tensor::from_vec((1, 1, 1), vec![z]).unwrap();
                    let r = grad_check_at("focal_loss", &[x], 0, |tape, v| {
                        focal_loss_with_logits(tape, &v[0], &[y], &cfg).map_err(|_| unreachable!())
                    })
                    .unwrap();
                    assert!(r.passes(1e-6), "p={p} {y:?} {r:?}");
                }
            }
        }
    }

    #[test]
    fn batch_gradient_check() {
        let cfg = FocalLossConfig::new(2.0, 0.7).unwrap();
        let labels = [Label::Genuine, Label::Spoof, Label::Spoof, Label::Genuine];
        for seed in 0..5 {
            let r = crate::tensor::grad_check("focal_loss", &[Shape::new(4, 1, 1)], seed, |tape, v| {
                let z = tape.scale(&v[0], 3.0);
                Ok(focal_loss_with_logits(tape, &z, &labels, &cfg).expect("valid batch"))
            })
            .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn non_negative_and_decreasing(a in 0.0f64..1.0, b in 0.0f64..1.0, gamma in 0.0f64..5.0, genuine: bool) {
            let cfg = FocalLossConfig::new(gamma, 0.4).unwrap();
            let y = if genuine { Label::Genuine } else { Label::Spoof };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let pt = |v: f64| if genuine { v } else { 1.0 - v };
            let la = focal_loss(&[lo], &[y], &cfg).unwrap();
            let lb = focal_loss(&[hi], &[y], &cfg).unwrap();
            proptest::prop_assert!(la >= 0.0 && lb >= 0.0);
            let clamp = |v: f64| v.clamp(PROB_EPS, 1.0 - PROB_EPS);
            let (ta, tb) = (clamp(pt(lo)), clamp(pt(hi)));
            if tb - ta > 1e-6 {
                proptest::prop_assert!(la > lb);
            } else if ta - tb > 1e-6 {
                proptest::prop_assert!(la < lb);
            }
        }
    }
}
