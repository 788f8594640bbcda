//! Finite-difference checks over every differentiable building block at
//! 64-bit precision.

use crate::layers::{
    batch_norm1d, conv1d, global_avg_pool, has_near_tie, linear, maxpool1d, selu, sigmoid, BatchNormConfig,
    ConvOptions, Mode, RunningStats,
};
use crate::model::{block_forward, meca_forward, BlockWeights, ConvRef};
use crate::objective::{focal_loss_with_logits, FocalLossConfig, Label};
use crate::tensor::{grad_check, grad_check_with, GradCheckError, GradCheckReport, Shape, Tape, Tensor};

pub const TOLERANCE: f64 = 1e-4;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub seed: u64,
    pub report: GradCheckReport,
}

impl SuiteResult {
    pub fn passes(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

fn near_kink(v: &[Tensor<f64>]) -> bool {
    v[0].data().iter().any(|x| x.abs() < 1e-3)
}

fn stats() -> RunningStats<f64> {
    RunningStats {
        mean: vec![0.1, -0.2, 0.05],
        var: vec![0.8, 1.3, 0.6],
    }
}

fn block(tape: &mut Tape<f64>, v: &[Tensor<f64>]) -> Result<Tensor<f64>, crate::tensor::TensorError> {
    let w = BlockWeights {
        splits: v[1..4].iter().map(|k| ConvRef::new(k, None)).collect(),
        norm_weight: &v[4],
        norm_bias: &v[5],
        mlp_in: ConvRef::new(&v[6], Some(&v[7])),
        mlp_out: ConvRef::new(&v[8], Some(&v[9])),
        meca: Some(&v[10]),
    };
    let mut s = RunningStats::new(8);
    block_forward(tape, &v[0], &w, &mut s, Mode::Train, BatchNormConfig::default())
}

fn cases(seed: u64) -> Result<Vec<GradCheckReport>, GradCheckError> {
    let labels = [Label::Genuine, Label::Spoof, Label::Spoof, Label::Genuine];
    let focal = FocalLossConfig::new(2.0, 0.7).expect("valid focal config");
    let mut out = vec![
        grad_check(
            "conv1d",
            &[Shape::new(2, 2, 9), Shape::new(3, 2, 3), Shape::new(1, 3, 1)],
            seed,
            |t, v| conv1d(t, &v[0], &v[1], Some(&v[2]), ConvOptions::padded(1)),
        )?,
        grad_check("conv1d_grouped", &[Shape::new(2, 4, 11), Shape::new(4, 2, 3)], seed, |t, v| {
            conv1d(t, &v[0], &v[1], None, ConvOptions::new(2, 2, 2))
        })?,
        grad_check(
            "linear",
            &[Shape::new(2, 4, 3), Shape::new(5, 4, 1), Shape::new(1, 5, 1)],
            seed,
            |t, v| linear(t, &v[0], &v[1], Some(&v[2])),
        )?,
    ];
    for (name, mode) in [("batch_norm1d_train", Mode::Train), ("batch_norm1d_eval", Mode::Eval)] {
        out.push(grad_check(
            name,
            &[Shape::new(3, 3, 5), Shape::new(1, 3, 1), Shape::new(1, 3, 1)],
            seed,
            |t, v| batch_norm1d(t, &v[0], &v[1], &v[2], &mut stats(), mode, BatchNormConfig::default()),
        )?);
    }
    out.push(grad_check_with("selu", &[Shape::new(2, 3, 7)], seed, |t, v| Ok(selu(t, &v[0])), near_kink)?);
    out.push(grad_check("sigmoid", &[Shape::new(2, 3, 7)], seed, |t, v| Ok(sigmoid(t, &v[0])))?);
    out.push(grad_check_with(
        "maxpool1d",
        &[Shape::new(2, 2, 12)],
        seed,
        |t, v| maxpool1d(t, &v[0], 3, 3, 0),
        |v| has_near_tie(&v[0], 3, 3),
    )?);
    out.push(grad_check("global_avg_pool", &[Shape::new(2, 3, 5)], seed, |t, v| global_avg_pool(t, &v[0]))?);
    out.push(grad_check("meca", &[Shape::new(2, 6, 4), Shape::new(1, 1, 3)], seed, |t, v| {
        meca_forward(t, &v[0], &v[1])
    })?);
    out.push(grad_check(
        "res2net_block",
        &[
            Shape::new(2, 8, 6),
            Shape::new(2, 2, 3),
            Shape::new(2, 2, 3),
            Shape::new(2, 2, 3),
            Shape::new(1, 8, 1),
            Shape::new(1, 8, 1),
            Shape::new(16, 8, 1),
            Shape::new(1, 16, 1),
            Shape::new(8, 16, 1),
            Shape::new(1, 8, 1),
            Shape::new(1, 1, 3),
        ],
        seed,
        block,
    )?);
    out.push(grad_check("focal_loss", &[Shape::new(4, 1, 1)], seed, |t, v| {
        let z = t.scale(&v[0], 3.0);
        Ok(focal_loss_with_logits(t, &z, &labels, &focal).expect("finite logits with matching labels"))
    })?);
    Ok(out)
}

/// Runs every case for every seed.
pub fn run(seeds: &[u64]) -> Result<Vec<SuiteResult>, GradCheckError> {
    let mut out = Vec::new();
    for &seed in seeds {
        out.extend(cases(seed)?.into_iter().map(|report| SuiteResult { seed, report }));
    }
    Ok(out)
}
