use crate::data::{assemble, batch_order, WaveRecord};
use crate::layers::Mode;
use crate::model::Model;
use crate::objective::{alpha_from_counts, compute_eer, focal_loss_with_logits, FocalLossConfig, Label, LabeledScore};
use crate::tensor::{Tape, Tensor};

use super::{lr_schedule, AdamW, Checkpoint, OptimizerState, TrainConfig, TrainError};

/// Tracks the epoch with the lowest metric; ties keep the earlier epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BestTracker {
    best: Option<(usize, f64)>,
}

impl BestTracker {
    /// Returns true if `value` strictly improves on every earlier value.
    pub fn update(&mut self, epoch: usize, value: f64) -> bool {
        match self.best {
            Some((_, b)) if !(value < b) => false,
            _ => {
                self.best = Some((epoch, value));
                true
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Dev-set EER in percent.
    pub dev_eer: f64,
    pub lr: f64,
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add(1 + epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn class_counts(records: &[WaveRecord]) -> Result<(usize, usize), TrainError> {
    let mut counts = (0, 0);
    for r in records {
        match r.label {
            Some(Label::Genuine) => counts.0 += 1,
            Some(Label::Spoof) => counts.1 += 1,
            None => return Err(TrainError::Contract(format!("training utterance {} has no label", r.utt_id))),
        }
    }
    Ok(counts)
}

/// Epoch-at-a-time training with dev-set model selection.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    model: Model<f32>,
    opt: AdamW,
    state: OptimizerState<f32>,
    focal: FocalLossConfig,
    epoch: usize,
    tracker: BestTracker,
    best: Option<Checkpoint>,
    logs: Vec<EpochLog>,
}

impl Trainer {
    /// Class weights come from the label counts of `train`.
    pub fn new(model: Model<f32>, cfg: TrainConfig, train: &[WaveRecord]) -> Result<Self, TrainError> {
        cfg.validate()?;
        let (g, s) = class_counts(train)?;
        let focal = FocalLossConfig::new(cfg.gamma_focal, alpha_from_counts(g, s)?)?;
        Ok(Self::with_loss(model, cfg, focal))
    }

    pub fn with_loss(model: Model<f32>, cfg: TrainConfig, focal: FocalLossConfig) -> Self {
        Trainer {
            opt: AdamW::from(&cfg),
            state: OptimizerState::new(model.params()),
            cfg,
            model,
            focal,
            epoch: 0,
            tracker: BestTracker::default(),
            best: None,
            logs: Vec::new(),
        }
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn logs(&self) -> &[EpochLog] {
        &self.logs
    }

    pub fn focal(&self) -> &FocalLossConfig {
        &self.focal
    }

    pub fn best(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    /// A checkpoint of the current weights and optimizer moments.
    pub fn snapshot(&self) -> Checkpoint {
        let eer = self.logs.last().map_or(f64::NAN, |l| l.dev_eer);
        Checkpoint::from_model(&self.model, Some(&self.state), self.epoch, eer, self.cfg.input_len)
    }

    /// One pass over `train`, then dev scoring. Epochs in logs count
    /// from 1.
    pub fn run_epoch(&mut self, train: &[WaveRecord], dev: &[WaveRecord]) -> Result<EpochLog, TrainError> {
        let epoch = self.epoch;
        let lr = lr_schedule(epoch, &self.cfg);
        self.model.set_mode(Mode::Train);
        let order = batch_order(train.len(), self.cfg.batch_size, shuffle_seed(self.cfg.seed, epoch), true)?;
        let mut total = 0.0;
        for (b, idx) in order.iter().enumerate() {
            let batch = assemble(train, idx, self.cfg.input_len)?;
            let mut tape = Tape::new();
            let bound = self.model.bind(&mut tape);
            let logits = self.model.forward(&mut tape, &bound, &batch.waves)?;
            let loss = focal_loss_with_logits(&mut tape, &logits, &batch.labels, &self.focal)?;
            let value = loss.item().expect("scalar loss") as f64;
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch: b, value });
            }
            total += value * idx.len() as f64;
            let grads = tape.backward_leaves(&loss).map_err(|e| TrainError::Contract(e.to_string()))?;
            let zeros: Vec<Tensor<f32>> = self.model.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            let g: Vec<&Tensor<f32>> = bound
                .tensors()
                .iter()
                .zip(&zeros)
                .map(|(t, z)| grads.get(t).unwrap_or(z))
                .collect();
            self.opt.step(self.model.params_mut(), &g, &mut self.state, lr)?;
        }
        let scores = score_records(&self.model, dev, self.cfg.input_len, self.cfg.batch_size)?;
        let dev_eer = compute_eer(&scores)?.percent;
        let log = EpochLog {
            epoch: epoch + 1,
            loss: total / train.len() as f64,
            dev_eer,
            lr,
        };
        self.epoch += 1;
        if self.tracker.update(log.epoch, dev_eer) {
            self.best = Some(Checkpoint::from_model(&self.model, None, log.epoch, dev_eer, self.cfg.input_len));
        }
        self.logs.push(log.clone());
        Ok(log)
    }

    /// Final weights, the best checkpoint, and per-epoch logs.
    pub fn finish(self) -> Result<TrainOutcome, TrainError> {
        let best = self.best.ok_or(TrainError::NoTraining)?;
        let mut model = self.model;
        model.set_mode(Mode::Eval);
        Ok(TrainOutcome {
            logs: self.logs,
            best,
            final_model: model,
        })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    /// Snapshot from the epoch with the lowest dev EER.
    pub best: Checkpoint,
    pub final_model: Model<f32>,
}

/// Runs `cfg.epochs` epochs.
pub fn train(
    model: Model<f32>,
    cfg: &TrainConfig,
    train: &[WaveRecord],
    dev: &[WaveRecord],
) -> Result<TrainOutcome, TrainError> {
    if cfg.epochs == 0 {
        return Err(TrainError::NoTraining);
    }
    if dev.is_empty() {
        return Err(TrainError::Contract("empty dev set".into()));
    }
    let mut t = Trainer::new(model, cfg.clone(), train)?;
    for _ in 0..cfg.epochs {
        t.run_epoch(train, dev)?;
    }
    t.finish()
}

/// Eval-mode scores for labeled records, in input order.
pub fn score_records(
    model: &Model<f32>,
    records: &[WaveRecord],
    input_len: usize,
    batch_size: usize,
) -> Result<Vec<LabeledScore>, TrainError> {
    let mut out = Vec::with_capacity(records.len());
    for idx in batch_order(records.len(), batch_size, 0, false)? {
        let batch = assemble(records, &idx, input_len)?;
        let scores = model.scores(&batch.waves)?;
        for ((&i, s), label) in idx.iter().zip(scores).zip(batch.labels) {
            let attack = records[i].attack.clone().unwrap_or_else(|| crate::objective::NO_ATTACK.to_string());
            out.push(LabeledScore::new(records[i].utt_id.clone(), s as f64, label, attack));
        }
    }
    Ok(out)
}
