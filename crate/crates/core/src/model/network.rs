use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    batch_norm1d, conv1d, global_avg_pool, linear, maxpool1d, selu, BatchNormConfig, ConvOptions, Mode,
    RunningStats,
};
use crate::tensor::{Element, Shape, Tape, Tensor};

use super::block::{block_forward, BlockWeights, ConvRef};
use super::{meca_kernel_size, ModelConfig, ModelError};

/// How a parameter is treated by weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Running statistics of one normalization layer, named by layer prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsBuffer<T> {
    pub name: String,
    pub stats: RunningStats<T>,
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: usize,
    bias: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Clone, Debug)]
struct Block {
    splits: Vec<Conv>,
    norm: Norm,
    mlp_in: Conv,
    mlp_out: Conv,
    meca: Option<usize>,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: (Conv, Norm),
    stages: Vec<Vec<Block>>,
    downsample: Vec<(Conv, Norm)>,
    head: Conv,
}

/// Parameters placed on a tape, indexed like [`Model::params`].
#[derive(Clone, Debug)]
pub struct Bound<T: Element>(Vec<Tensor<T>>);

impl<T: Element> Bound<T> {
    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.0
    }

    fn conv(&self, c: Conv) -> ConvRef<'_, T> {
        ConvRef::new(&self.0[c.weight], c.bias.map(|b| &self.0[b]))
    }
}

struct Builder<T: Element> {
    params: Vec<Parameter<T>>,
    buffers: Vec<StatsBuffer<T>>,
    rng: ChaCha8Rng,
}

impl<T: Element> Builder<T> {
    fn push(&mut self, name: String, kind: ParamKind, value: Tensor<T>) -> usize {
        self.params.push(Parameter { name, kind, value });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, bias: bool) -> Conv {
        let bound = (1.0 / (c_in * k) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let values = (0..c_out * c_in * k).map(|_| T::lit(dist.sample(&mut self.rng))).collect();
        let w = Tensor::from_vec((c_out, c_in, k), values).expect("length matches shape");
        let weight = self.push(format!("{name}.weight"), ParamKind::Weight, w);
        let bias = bias.then(|| self.push(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros((1, c_out, 1))));
        Conv { weight, bias }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        let gamma = self.push(format!("{name}.weight"), ParamKind::Norm, Tensor::ones((1, c, 1)));
        let beta = self.push(format!("{name}.bias"), ParamKind::Norm, Tensor::zeros((1, c, 1)));
        self.buffers.push(StatsBuffer {
            name: name.to_string(),
            stats: RunningStats::new(c),
        });
        Norm {
            gamma,
            beta,
            stats: self.buffers.len() - 1,
        }
    }
}

/// The network, its named parameters and its normalization statistics.
#[derive(Clone, Debug)]
pub struct Model<T: Element> {
    config: ModelConfig,
    params: Vec<Parameter<T>>,
    buffers: Vec<StatsBuffer<T>>,
    layout: Layout,
    mode: Mode,
    bn: BatchNormConfig,
}

impl<T: Element> Model<T> {
    /// Builds and initializes the network. Weights are drawn from
    /// `uniform(±√(1/fan_in))` in registry order; scales are 1, shifts and
    /// biases 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            buffers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c0 = config.stage_channels[0];
        let stem = (b.conv("stem.conv", c0, 1, config.stem_kernel, false), b.norm("stem.norm", c0));
        let mut stages = Vec::new();
        let mut downsample = Vec::new();
        for (i, (&depth, &c)) in config.stage_depths.iter().zip(&config.stage_channels).enumerate() {
            if i > 0 {
                let prev = config.stage_channels[i - 1];
                let name = format!("downsample{i}");
                let conv = b.conv(&format!("{name}.conv"), c, prev, config.downsample_kernel, false);
                downsample.push((conv, b.norm(&format!("{name}.norm"), c)));
            }
            let width = c / config.res2net_splits;
            let wide = c * config.mlp_expansion;
            let k = meca_kernel_size(c, config.meca_gamma, config.meca_b);
            let blocks = (1..=depth)
                .map(|j| {
                    let p = format!("stage{}.block{j}", i + 1);
                    let splits = (2..=config.res2net_splits)
                        .map(|m| b.conv(&format!("{p}.split{m}"), width, width, config.split_kernel, false))
                        .collect();
                    let norm = b.norm(&format!("{p}.norm"), c);
                    let mlp_in = b.conv(&format!("{p}.mlp_in"), wide, c, 1, true);
                    let mlp_out = b.conv(&format!("{p}.mlp_out"), c, wide, 1, true);
                    let meca = config.use_meca.then(|| b.conv(&format!("{p}.meca"), 1, 1, k, false).weight);
                    Block {
                        splits,
                        norm,
                        mlp_in,
                        mlp_out,
                        meca,
                    }
                })
                .collect();
            stages.push(blocks);
        }
        let last = *config.stage_channels.last().expect("validated non-empty");
        let head = b.conv("head", 1, last, 1, true);
        Ok(Model {
            config,
            params: b.params,
            buffers: b.buffers,
            layout: Layout {
                stem,
                stages,
                downsample,
                head,
            },
            mode: Mode::Train,
            bn: BatchNormConfig::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[StatsBuffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [StatsBuffer<T>] {
        &mut self.buffers
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Trainable scalars: weights, biases, and normalization scale/shift.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Parameter totals grouped by top-level module (`stem`, `stage1`,
    /// `downsample1`, ..., `head`) in registry order.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for p in &self.params {
            let module = p.name.split('.').next().unwrap_or(&p.name);
            match out.last_mut() {
                Some((m, n)) if m == module => *n += p.value.numel(),
                _ => out.push((module.to_string(), p.value.numel())),
            }
        }
        out
    }

    /// Number of attention weights; zero when attention is disabled.
    pub fn meca_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.ends_with(".meca.weight"))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| StatsBuffer {
                    name: b.name.clone(),
                    stats: RunningStats {
                        mean: b.stats.mean.iter().map(|v| U::lit(v.as_f64())).collect(),
                        var: b.stats.var.iter().map(|v| U::lit(v.as_f64())).collect(),
                    },
                })
                .collect(),
            layout: self.layout.clone(),
            mode: self.mode,
            bn: self.bn,
        }
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound<T> {
        Bound(self.params.iter().map(|p| tape.leaf(&p.value)).collect())
    }

    /// Logits `(B, 1, 1)` for waveforms `(B, 1, L)`. In train mode batch
    /// statistics are used and the running statistics updated.
    pub fn forward(&mut self, tape: &mut Tape<T>, bound: &Bound<T>, wave: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mode = self.mode;
        let mut buffers = std::mem::take(&mut self.buffers);
        let out = self.run(tape, bound, wave, &mut buffers, mode);
        self.buffers = buffers;
        out
    }

    /// Eval-mode forward pass that leaves the model untouched.
    pub fn infer(&self, tape: &mut Tape<T>, bound: &Bound<T>, wave: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut buffers = self.buffers.clone();
        self.run(tape, bound, wave, &mut buffers, Mode::Eval)
    }

    /// Eval-mode logits without recording gradients.
    pub fn scores(&self, wave: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let mut tape = Tape::inference();
        let bound = self.bind(&mut tape);
        Ok(self.infer(&mut tape, &bound, wave)?.into_vec())
    }

    /// Runs a single residual block, for inspection and testing.
    pub fn forward_block(
        &mut self,
        tape: &mut Tape<T>,
        bound: &Bound<T>,
        stage: usize,
        block: usize,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>, ModelError> {
        let b = self
            .layout
            .stages
            .get(stage)
            .and_then(|s| s.get(block))
            .ok_or_else(|| ModelError::Config(format!("no block {block} in stage {stage}")))?;
        let w = block_weights(bound, b);
        let stats = &mut self.buffers[b.norm.stats].stats;
        block_forward(tape, x, &w, stats, self.mode, self.bn).map_err(ModelError::at(format!(
            "stage{}.block{}",
            stage + 1,
            block + 1
        )))
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound<T>,
        wave: &Tensor<T>,
        buffers: &mut [StatsBuffer<T>],
        mode: Mode,
    ) -> Result<Tensor<T>, ModelError> {
        let s = wave.shape();
        if s.channels != 1 || s.batch == 0 {
            return Err(ModelError::Input(s));
        }
        let min = self.config.min_input_len();
        if s.len < min {
            return Err(ModelError::TooShort { len: s.len, min });
        }
        let cfg = &self.config;
        let bn = self.bn;
        let norm = |tape: &mut Tape<T>, x: &Tensor<T>, n: Norm, buffers: &mut [StatsBuffer<T>], at: &str| {
            batch_norm1d(tape, x, &bound.0[n.gamma], &bound.0[n.beta], &mut buffers[n.stats].stats, mode, bn)
                .map_err(ModelError::at(at))
        };

        let (conv, n) = self.layout.stem;
        let stem = ConvOptions::new(cfg.stem_stride, cfg.stem_kernel / 2, 1);
        let c = bound.conv(conv);
        let mut h = conv1d(tape, wave, c.weight, c.bias, stem).map_err(ModelError::at("stem.conv"))?;
        h = norm(tape, &h, n, buffers, "stem.norm")?;
        h = selu(tape, &h);

        for (i, blocks) in self.layout.stages.iter().enumerate() {
            if i > 0 {
                let at = format!("downsample{i}");
                let (conv, n) = self.layout.downsample[i - 1];
                h = maxpool1d(tape, &h, cfg.pool_kernel, cfg.pool_stride, 0).map_err(ModelError::at(&at))?;
                let c = bound.conv(conv);
                let opts = ConvOptions::padded(cfg.downsample_kernel / 2);
                h = conv1d(tape, &h, c.weight, c.bias, opts).map_err(ModelError::at(&at))?;
                h = norm(tape, &h, n, buffers, &at)?;
            }
            for (j, b) in blocks.iter().enumerate() {
                let w = block_weights(bound, b);
                h = block_forward(tape, &h, &w, &mut buffers[b.norm.stats].stats, mode, bn)
                    .map_err(ModelError::at(format!("stage{}.block{}", i + 1, j + 1)))?;
            }
        }

        let pooled = global_avg_pool(tape, &h).map_err(ModelError::at("head"))?;
        let c = bound.conv(self.layout.head);
        let logit = linear(tape, &pooled, c.weight, c.bias).map_err(ModelError::at("head"))?;
        debug_assert_eq!(logit.shape(), Shape::new(s.batch, 1, 1));
        Ok(logit)
    }
}

fn block_weights<'a, T: Element>(bound: &'a Bound<T>, b: &Block) -> BlockWeights<'a, T> {
    BlockWeights {
        splits: b.splits.iter().map(|&c| bound.conv(c)).collect(),
        norm_weight: &bound.0[b.norm.gamma],
        norm_bias: &bound.0[b.norm.beta],
        mlp_in: bound.conv(b.mlp_in),
        mlp_out: bound.conv(b.mlp_out),
        meca: b.meca.map(|i| &bound.0[i]),
    }
}
