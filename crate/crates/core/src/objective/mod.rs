//! Training objective and evaluation metrics.

mod focal;
mod metrics;

pub use focal::{alpha_from_counts, focal_loss, focal_loss_with_logits, FocalLossConfig, PROB_EPS};
pub use metrics::{
    compute_eer, det_curve, evaluate, min_tdcf, parse_asv_errors, per_attack_breakdown, tdcf_at, Breakdown,
    DetPoint, Eer, EvalReport, TdcfParams,
};

use std::fmt;
use std::str::FromStr;

/// Ground truth. Genuine speech is class 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Genuine,
    Spoof,
}

impl Label {
    pub fn class(self) -> usize {
        match self {
            Label::Genuine => 0,
            Label::Spoof => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Genuine => "bonafide",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bonafide" | "genuine" => Ok(Label::Genuine),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Attack id used for genuine utterances.
pub const NO_ATTACK: &str = "-";

/// A countermeasure score; higher means more likely genuine.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScore {
    pub utt_id: String,
    pub score: f64,
    pub label: Label,
    pub attack: String,
}

impl LabeledScore {
    pub fn new(utt_id: impl Into<String>, score: f64, label: Label, attack: impl Into<String>) -> Self {
        LabeledScore {
            utt_id: utt_id.into(),
            score,
            label,
            attack: attack.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty batch")]
    Empty,
    #[error("{got} labels for {expected} predictions")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least one genuine and one spoof score ({genuine} genuine, {spoof} spoof)")]
    SingleClass { genuine: usize, spoof: usize },
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}
