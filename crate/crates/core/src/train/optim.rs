use crate::model::Parameter;
use crate::tensor::{Element, Tensor};

use super::{TrainConfig, TrainError};

/// AdamW moments, one entry per parameter in registry order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        OptimizerState {
            m: params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect(),
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        AdamW {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps_adam,
            weight_decay: c.weight_decay,
        }
    }
}

impl AdamW {
    /// One bias-corrected Adam step followed by decoupled decay
    /// `θ ← θ − lr·λ·θ` on parameters whose kind decays.
    pub fn step<T: Element>(
        &self,
        params: &mut [Parameter<T>],
        grads: &[&Tensor<T>],
        state: &mut OptimizerState<T>,
        lr: f64,
    ) -> Result<(), TrainError> {
        if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
            return Err(TrainError::Contract(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        if let Some((p, g)) = params.iter().zip(grads).find(|(p, g)| p.value.shape() != g.shape()) {
            return Err(TrainError::Contract(format!(
                "gradient {} does not match parameter {} {}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        if let Some(p) = params.iter().zip(&state.m).find(|(p, m)| p.value.numel() != m.len()) {
            return Err(TrainError::Contract(format!("moment size mismatch for {}", p.0.name)));
        }
        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let bc1 = T::lit(1.0 / (1.0 - self.beta1.powi(t)));
        let bc2 = T::lit(1.0 / (1.0 - self.beta2.powi(t)));
        let (lr_t, eps) = (T::lit(lr), T::lit(self.eps));
        let decay = T::lit(lr * self.weight_decay);
        for (i, p) in params.iter_mut().enumerate() {
            let decays = p.kind.decays() && self.weight_decay != 0.0;
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            let w = p.value.data_mut();
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = b1 * m[j] + c1 * g;
                v[j] = b2 * v[j] + c2 * g * g;
                let m_hat = m[j] * bc1;
                let v_hat = v[j] * bc2;
                w[j] -= lr_t * m_hat / (v_hat.sqrt() + eps);
                if decays {
                    w[j] -= decay * w[j];
                }
            }
        }
        Ok(())
    }
}

/// `lr0 · decay^epoch`, epochs counted from 0.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamKind;

    fn param(kind: ParamKind, v: &[f64]) -> Parameter<f64> {
        Parameter {
            name: "p".into(),
            kind,
            value: Tensor::from_vec((1, 1, v.len()), v.to_vec()).unwrap(),
        }
    }

    fn opt(wd: f64) -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = vec![param(ParamKind::Weight, &[1.0, -2.0])];
        let mut s = OptimizerState::new(&p);
        let g = Tensor::zeros((1, 1, 2));
        opt(0.0).step(&mut p, &[&g], &mut s, 1e-3).unwrap();
        assert_eq!(p[0].value.data(), &[1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn hand_step() {
        let mut p = vec![param(ParamKind::Weight, &[1.0])];
        let mut s = OptimizerState::new(&p);
        let g = Tensor::from_vec((1, 1, 1), vec![0.1]).unwrap();
        opt(0.01).step(&mut p, &[&g], &mut s, 1e-3).unwrap();
        let after_adam = 1.0 - 1e-3 * 0.1 / (0.1 + 1e-8);
        let expected = after_adam - 1e-3 * 0.01 * after_adam;
        assert!((p[0].value.data()[0] - expected).abs() < 1e-15);
        assert!((p[0].value.data()[0] - 0.99899).abs() < 1e-6);
    }

    #[test]
    fn pure_decay_and_exclusions() {
        let mut p = vec![
            param(ParamKind::Weight, &[2.0]),
            param(ParamKind::Bias, &[2.0]),
            param(ParamKind::Norm, &[2.0]),
        ];
        let mut s = OptimizerState::new(&p);
        // Arbitrary history: decay must not depend on it.
        s.m = vec![vec![0.0]; 3];
        s.v = vec![vec![0.5]; 3];
        s.step = 7;
        let g = Tensor::zeros((1, 1, 1));
        opt(0.01).step(&mut p, &[&g, &g, &g], &mut s, 1e-3).unwrap();
        assert_eq!(p[0].value.data()[0], 2.0 - 1e-3 * 0.01 * 2.0);
        assert_eq!(p[1].value.data()[0], 2.0);
        assert_eq!(p[2].value.data()[0], 2.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for &g in &[1e-3, 0.02, 1.0, 37.0, 1e3, -1e-3, -5.0, -1e3] {
            let mut p = vec![param(ParamKind::Bias, &[0.0])];
            let mut s = OptimizerState::new(&p);
            let gt = Tensor::from_vec((1, 1, 1), vec![g]).unwrap();
            opt(0.0).step(&mut p, &[&gt], &mut s, 1e-3).unwrap();
            let moved = -p[0].value.data()[0];
            assert!(moved.signum() == g.signum());
            assert!((moved.abs() - 1e-3).abs() < 0.05e-3, "g={g} moved {moved}");
        }
    }

    #[test]
    fn second_moment_is_non_negative() {
        let mut p = vec![param(ParamKind::Weight, &[0.3, -0.1, 0.7])];
        let mut s = OptimizerState::new(&p);
        for k in 0..20 {
            let g = Tensor::uniform((1, 1, 3), -1.0, 1.0, k);
            opt(0.01).step(&mut p, &[&g], &mut s, 1e-3).unwrap();
            assert!(s.v[0].iter().all(|&v| v >= 0.0));
        }
        assert_eq!(s.step, 20);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![param(ParamKind::Weight, &[1.0, 2.0])];
        let mut s = OptimizerState::new(&p);
        let g = Tensor::zeros((1, 1, 3));
        assert!(matches!(opt(0.0).step(&mut p, &[&g], &mut s, 1e-3), Err(TrainError::Contract(_))));
        assert!(matches!(opt(0.0).step(&mut p, &[], &mut s, 1e-3), Err(TrainError::Contract(_))));
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_schedule(0, &c), 0.001);
        assert!((lr_schedule(1, &c) - 0.00097).abs() < 1e-15);
        assert!((lr_schedule(50, &c) - 2.181e-4).abs() < 1e-7);
    }
}
