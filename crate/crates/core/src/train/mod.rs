//! Optimization, the epoch loop with dev-set model selection, and
//! checkpoints.

mod checkpoint;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, MAGIC, VERSION};
pub use optim::{lr_schedule, AdamW, OptimizerState};
pub use trainer::{score_records, train, BestTracker, EpochLog, TrainOutcome, Trainer};

use crate::data::{DataError, DEFAULT_LEN};
use crate::kv::{KvError, KvMap};
use crate::model::ModelError;
use crate::objective::MetricsError;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub gamma_focal: f64,
    pub seed: u64,
    pub input_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            weight_decay: 0.01,
            lr_decay: 0.97,
            gamma_focal: 2.0,
            seed: 0,
            input_len: DEFAULT_LEN,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "batch_size",
        "lr0",
        "beta1",
        "beta2",
        "eps_adam",
        "weight_decay",
        "lr_decay",
        "gamma_focal",
        "seed",
        "input_len",
    ];

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!("betas ({}, {}) must lie in (0, 1)", self.beta1, self.beta2));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be positive", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} must lie in (0, 1]", self.lr_decay));
        }
        if !(self.eps_adam > 0.0 && self.weight_decay >= 0.0 && self.gamma_focal >= 0.0) {
            return bad("eps_adam must be positive; weight_decay and gamma_focal non-negative".into());
        }
        if self.batch_size == 0 || self.input_len == 0 {
            return bad("batch_size and input_len must be positive".into());
        }
        Ok(())
    }

    /// Overrides fields present in `map`; other keys are ignored.
    pub fn update_from(&mut self, map: &KvMap) -> Result<(), KvError> {
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = map.parse_value(stringify!($field))? {
                    self.$field = v;
                }
            )*};
        }
        take!(epochs, batch_size, lr0, beta1, beta2, eps_adam, weight_decay, lr_decay, gamma_focal, seed, input_len);
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::default();
        m.set("epochs", self.epochs);
        m.set("batch_size", self.batch_size);
        m.set("lr0", self.lr0);
        m.set("beta1", self.beta1);
        m.set("beta2", self.beta2);
        m.set("eps_adam", self.eps_adam);
        m.set("weight_decay", self.weight_decay);
        m.set("lr_decay", self.lr_decay);
        m.set("gamma_focal", self.gamma_focal);
        m.set("seed", self.seed);
        m.set("input_len", self.input_len);
        m
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("no training performed")]
    NoTraining,
    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, value: f64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_validation() {
        let mut c = TrainConfig::default();
        c.epochs = 7;
        c.lr0 = 0.0025;
        let mut d = TrainConfig::default();
        d.update_from(&c.to_kv()).unwrap();
        assert_eq!(c, d);
        assert!(c.validate().is_ok());
        for bad in [
            TrainConfig { beta1: 1.0, ..TrainConfig::default() },
            TrainConfig { lr0: 0.0, ..TrainConfig::default() },
            TrainConfig { lr_decay: 1.5, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
