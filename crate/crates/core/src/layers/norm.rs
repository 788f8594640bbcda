use crate::tensor::{Backward, Element, Shape, Tape, Tensor, TensorError};

/// Whether normalization uses batch statistics (and updates the running
/// ones) or the running statistics alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Per-channel running mean and (biased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// `y = γ·(x − μ)/√(σ² + ε) + β` per channel. In train mode μ and σ² are
/// the biased statistics over batch × time and `stats` is updated with
/// momentum; in eval mode `stats` supplies them and is left untouched.
///
/// `gamma` and `beta` are `(1, C, 1)`.
pub fn batch_norm1d<T: Element>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    let per_channel = Shape::new(1, s.channels, 1);
    if gamma.shape() != per_channel || beta.shape() != per_channel || stats.channels() != s.channels {
        return Err(TensorError::shape(
            "batch_norm1d",
            format!(
                "input {s} with scale {}, shift {} and {} running channels",
                gamma.shape(),
                beta.shape(),
                stats.channels()
            ),
        ));
    }
    let count = s.batch * s.len;
    if mode == Mode::Train && count < 2 {
        return Err(TensorError::DegenerateBatch { count });
    }

    let xd = x.data();
    let rows = |c: usize| (0..s.batch).map(move |b| (b * s.channels + c) * s.len);
    let mut inv_std = vec![T::zero(); s.channels];
    let mut shift = vec![T::zero(); s.channels];
    for c in 0..s.channels {
        let (mean, var) = match mode {
            Mode::Train => {
                let n = count as f64;
                let mean = rows(c)
                    .flat_map(|r| &xd[r..r + s.len])
                    .map(|v| v.as_f64())
                    .sum::<f64>()
                    / n;
                let var = rows(c)
                    .flat_map(|r| &xd[r..r + s.len])
                    .map(|v| (v.as_f64() - mean).powi(2))
                    .sum::<f64>()
                    / n;
                let m = cfg.momentum;
                stats.mean[c] = T::lit((1.0 - m) * stats.mean[c].as_f64() + m * mean);
                stats.var[c] = T::lit((1.0 - m) * stats.var[c].as_f64() + m * var);
                (mean, var)
            }
            Mode::Eval => (stats.mean[c].as_f64(), stats.var[c].as_f64()),
        };
        inv_std[c] = T::lit(1.0 / (var + cfg.eps).sqrt());
        shift[c] = T::lit(mean);
    }

    let (g, bt) = (gamma.data(), beta.data());
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for c in 0..s.channels {
        for r in rows(c) {
            for i in r..r + s.len {
                let h = (xd[i] - shift[c]) * inv_std[c];
                xhat[i] = h;
                out[i] = g[c] * h + bt[c];
            }
        }
    }
    let value = Tensor::from_parts(s, out);
    let op = BatchNormBackward {
        shape: s,
        xhat,
        inv_std,
        gamma: g.to_vec(),
        train: mode == Mode::Train,
    };
    Ok(tape.record(value, &[x, gamma, beta], op))
}

struct BatchNormBackward<T> {
    shape: Shape,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    train: bool,
}

impl<T: Element> Backward<T> for BatchNormBackward<T> {
    fn name(&self) -> &'static str {
        "batch_norm1d"
    }

    fn backward(&self, grad: &[T], needed: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = self.shape;
        let rows = |c: usize| (0..s.batch).map(move |b| (b * s.channels + c) * s.len);
        let mut dgamma = vec![T::zero(); s.channels];
        let mut dbeta = vec![T::zero(); s.channels];
        for c in 0..s.channels {
            for r in rows(c) {
                for i in r..r + s.len {
                    dgamma[c] += grad[i] * self.xhat[i];
                    dbeta[c] += grad[i];
                }
            }
        }
        let dx = needed[0].then(|| {
            let mut dx = vec![T::zero(); grad.len()];
            let n = T::lit((s.batch * s.len) as f64);
            for c in 0..s.channels {
                let scale = self.gamma[c] * self.inv_std[c];
                let (mean_g, mean_gx) = if self.train {
                    (dbeta[c] / n, dgamma[c] / n)
                } else {
                    (T::zero(), T::zero())
                };
                for r in rows(c) {
                    for i in r..r + s.len {
                        dx[i] = scale * (grad[i] - mean_g - self.xhat[i] * mean_gx);
                    }
                }
            }
            dx
        });
        vec![dx, needed[1].then_some(dgamma), needed[2].then_some(dbeta)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Fill};

    fn bn(
        x: &Tensor<f64>,
        stats: &mut RunningStats<f64>,
        mode: Mode,
    ) -> Result<Tensor<f64>, TensorError> {
        let c = x.shape().channels;
        batch_norm1d(
            &mut Tape::inference(),
            x,
            &Tensor::ones((1, c, 1)),
            &Tensor::zeros((1, c, 1)),
            stats,
            mode,
            BatchNormConfig::default(),
        )
    }

    #[test]
    fn eval_identity_statistics() {
        let x = Tensor::uniform((2, 3, 4), -2.0, 2.0, 1);
        let mut stats = RunningStats::new(3);
        let y = bn(&x, &mut stats, Mode::Eval).unwrap();
        let k = 1.0 / (1.0 + 1e-5_f64).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * k).abs() < 1e-15);
        }
        assert_eq!(stats, RunningStats::new(3));
    }

    #[test]
    fn constant_channel_maps_to_shift() {
        let x = Tensor::<f64>::full((2, 1, 3), 4.25);
        let mut stats = RunningStats::new(1);
        let y = batch_norm1d(
            &mut Tape::inference(),
            &x,
            &Tensor::full((1, 1, 1), 3.0),
            &Tensor::full((1, 1, 1), -0.5),
            &mut stats,
            Mode::Train,
            BatchNormConfig::default(),
        )
        .unwrap();
        assert!(y.data().iter().all(|&v| v == -0.5));
    }

    #[test]
    fn hand_normalization() {
        let x = Tensor::from_vec((1, 1, 2), vec![1.0, 3.0]).unwrap();
        let mut stats = RunningStats::new(1);
        let y = bn(&x, &mut stats, Mode::Train).unwrap();
        let k = 1.0 / (1.0 + 1e-5_f64).sqrt();
        assert!((y.data()[0] + k).abs() < 1e-15);
        assert!((y.data()[1] - k).abs() < 1e-15);
        // μ = 2, σ² = 1 folded in with momentum 0.1.
        assert!((stats.mean[0] - 0.2).abs() < 1e-15);
        assert!((stats.var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_batch() {
        let x = Tensor::<f64>::new((1, 2, 1), Fill::Ones).unwrap();
        let err = bn(&x, &mut RunningStats::new(2), Mode::Train).unwrap_err();
        assert_eq!(err, TensorError::DegenerateBatch { count: 1 });
        assert!(bn(&x, &mut RunningStats::new(2), Mode::Eval).is_ok());
    }

    #[test]
    fn train_output_is_standardized() {
        let x = Tensor::uniform((4, 3, 8), -3.0, 5.0, 11);
        let y = bn(&x, &mut RunningStats::new(3), Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.row(b, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn grad_checks() {
        for seed in 0..5 {
            for mode in [Mode::Train, Mode::Eval] {
                let r = grad_check(
                    "batch_norm1d",
                    &[Shape::new(3, 2, 5), Shape::new(1, 2, 1), Shape::new(1, 2, 1)],
                    seed,
                    |tape, v| {
                        let mut stats = RunningStats {
                            mean: vec![0.1, -0.2],
                            var: vec![0.8, 1.3],
                        };
                        batch_norm1d(tape, &v[0], &v[1], &v[2], &mut stats, mode, BatchNormConfig::default())
                    },
                )
                .unwrap();
                assert!(r.passes(1e-4), "{mode:?} {r:?}");
            }
        }
    }
}
