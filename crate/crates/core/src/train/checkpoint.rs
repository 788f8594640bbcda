use std::path::{Path, PathBuf};

use crate::kv::KvMap;
use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::{Shape, Tensor};

use super::OptimizerState;

pub const MAGIC: &[u8; 4] = b"CNBN";
pub const VERSION: u32 = 1;

const EPOCH_KEY: &str = "checkpoint.epoch";
const EER_KEY: &str = "checkpoint.dev_eer";
const STEP_KEY: &str = "checkpoint.optimizer_step";
const LEN_KEY: &str = "checkpoint.input_len";
const MEAN_SUFFIX: &str = ".running_mean";
const VAR_SUFFIX: &str = ".running_var";
const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, not a checkpoint")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checksum error: {0}")]
    Checksum(String),
    #[error("malformed checkpoint field {field}: {detail}")]
    Format { field: &'static str, detail: String },
    #[error("unknown parameter {0:?} for this model config")]
    UnknownParameter(String),
    #[error("parameter {0:?} missing from checkpoint")]
    MissingParameter(String),
    #[error("shape mismatch for {name}: checkpoint {found}, model {expected}")]
    Shape { name: String, expected: Shape, found: Shape },
    #[error("checkpoint config: {0}")]
    Config(#[from] ModelError),
}

/// A model snapshot with optional optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub dev_eer: f64,
    /// Aligned input length the model was trained with.
    pub input_len: usize,
    /// Parameters, running statistics and optimizer moments, by name.
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub optimizer_step: Option<u64>,
}

fn stats_tensor(v: &[f32]) -> Tensor<f32> {
    Tensor::from_vec((1, v.len(), 1), v.to_vec()).expect("length matches")
}

impl Checkpoint {
    pub fn from_model(
        model: &Model<f32>,
        optimizer: Option<&OptimizerState<f32>>,
        epoch: usize,
        dev_eer: f64,
        input_len: usize,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> =
            model.params().iter().map(|p| (p.name.clone(), p.value.detach())).collect();
        for b in model.buffers() {
            tensors.push((format!("{}{MEAN_SUFFIX}", b.name), stats_tensor(&b.stats.mean)));
            tensors.push((format!("{}{VAR_SUFFIX}", b.name), stats_tensor(&b.stats.var)));
        }
        if let Some(opt) = optimizer {
            for (prefix, moments) in [(M_PREFIX, &opt.m), (V_PREFIX, &opt.v)] {
                for (p, m) in model.params().iter().zip(moments) {
                    let t = Tensor::from_vec(p.value.shape(), m.clone()).expect("moment matches parameter");
                    tensors.push((format!("{prefix}{}", p.name), t));
                }
            }
        }
        Checkpoint {
            config: model.config().clone(),
            epoch,
            dev_eer,
            input_len,
            tensors,
            optimizer_step: optimizer.map(|o| o.step),
        }
    }

    /// Copies parameters and statistics into `model`, which must have
    /// exactly the checkpoint's parameter names and shapes.
    pub fn apply_to(&self, model: &mut Model<f32>) -> Result<(), CheckpointError> {
        let mut seen = vec![false; model.params().len()];
        let mut seen_stats = vec![(false, false); model.buffers().len()];
        for (name, t) in &self.tensors {
            if name.starts_with(M_PREFIX) || name.starts_with(V_PREFIX) {
                continue;
            }
            if let Some(i) = model.params().iter().position(|p| &p.name == name) {
                let p = &mut model.params_mut()[i];
                if p.value.shape() != t.shape() {
                    return Err(CheckpointError::Shape {
                        name: name.clone(),
                        expected: p.value.shape(),
                        found: t.shape(),
                    });
                }
                p.value = t.detach();
                seen[i] = true;
                continue;
            }
            let stat = [(MEAN_SUFFIX, true), (VAR_SUFFIX, false)]
                .into_iter()
                .find_map(|(suffix, is_mean)| name.strip_suffix(suffix).map(|base| (base, is_mean)));
            let Some((base, is_mean)) = stat else {
                return Err(CheckpointError::UnknownParameter(name.clone()));
            };
            let Some(j) = model.buffers().iter().position(|b| b.name == base) else {
                return Err(CheckpointError::UnknownParameter(name.clone()));
            };
            let buf = &mut model.buffers_mut()[j];
            let expected = Shape::new(1, buf.stats.channels(), 1);
            if t.shape() != expected {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    expected,
                    found: t.shape(),
                });
            }
            if is_mean {
                buf.stats.mean = t.data().to_vec();
                seen_stats[j].0 = true;
            } else {
                buf.stats.var = t.data().to_vec();
                seen_stats[j].1 = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CheckpointError::MissingParameter(model.params()[i].name.clone()));
        }
        if let Some(j) = seen_stats.iter().position(|&(m, v)| !(m && v)) {
            return Err(CheckpointError::MissingParameter(format!("{}{MEAN_SUFFIX}", model.buffers()[j].name)));
        }
        Ok(())
    }

    /// A model built from the stored config with the stored weights.
    pub fn to_model(&self) -> Result<Model<f32>, CheckpointError> {
        let mut model = Model::new(self.config.clone(), 0)?;
        self.apply_to(&mut model)?;
        model.set_mode(crate::layers::Mode::Eval);
        Ok(model)
    }

    /// Optimizer moments aligned with `model`'s registry, when stored.
    pub fn optimizer_state(&self, model: &Model<f32>) -> Result<Option<OptimizerState<f32>>, CheckpointError> {
        let Some(step) = self.optimizer_step else {
            return Ok(None);
        };
        let find = |name: String| {
            self.tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.data().to_vec())
                .ok_or(CheckpointError::MissingParameter(name))
        };
        let mut state = OptimizerState::new(model.params());
        for (i, p) in model.params().iter().enumerate() {
            state.m[i] = find(format!("{M_PREFIX}{}", p.name))?;
            state.v[i] = find(format!("{V_PREFIX}{}", p.name))?;
        }
        state.step = step;
        Ok(Some(state))
    }

    fn header(&self) -> String {
        let mut kv = self.config.to_kv();
        kv.set(EPOCH_KEY, self.epoch);
        kv.set(EER_KEY, self.dev_eer);
        kv.set(LEN_KEY, self.input_len);
        if let Some(s) = self.optimizer_step {
            kv.set(STEP_KEY, s);
        }
        kv.to_text()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = self.header();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let s = t.shape();
            out.extend_from_slice(&3u32.to_le_bytes());
            for d in [s.batch, s.channels, s.len] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let start = out.len();
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let header_len = r.u32("config length")? as usize;
        let header = std::str::from_utf8(r.take(header_len, "config")?).map_err(|e| CheckpointError::Format {
            field: "config",
            detail: e.to_string(),
        })?;
        let mut kv = KvMap::parse(header).map_err(|e| CheckpointError::Format {
            field: "config",
            detail: e.to_string(),
        })?;
        let meta = |kv: &mut KvMap, key: &str| kv.remove(key);
        let parse_err = |field: &'static str, v: &str| CheckpointError::Format {
            field,
            detail: format!("unparsable value {v:?}"),
        };
        let epoch_text = meta(&mut kv, EPOCH_KEY).ok_or(CheckpointError::Format {
            field: "epoch",
            detail: "missing".into(),
        })?;
        let epoch = epoch_text.parse().map_err(|_| parse_err("epoch", &epoch_text))?;
        let eer_text = meta(&mut kv, EER_KEY).ok_or(CheckpointError::Format {
            field: "dev_eer",
            detail: "missing".into(),
        })?;
        let dev_eer = eer_text.parse().map_err(|_| parse_err("dev_eer", &eer_text))?;
        let len_text = meta(&mut kv, LEN_KEY).ok_or(CheckpointError::Format {
            field: "input_len",
            detail: "missing".into(),
        })?;
        let input_len = len_text.parse().map_err(|_| parse_err("input_len", &len_text))?;
        let optimizer_step = meta(&mut kv, STEP_KEY)
            .map(|s| s.parse().map_err(|_| parse_err("optimizer_step", &s)))
            .transpose()?;
        let config = ModelConfig::from_kv(&kv)?;

        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32("tensor name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec()).map_err(|e| {
                CheckpointError::Format {
                    field: "tensor name",
                    detail: e.to_string(),
                }
            })?;
            let rank = r.u32("tensor rank")? as usize;
            if rank != 3 {
                return Err(CheckpointError::Format {
                    field: "tensor rank",
                    detail: format!("{name}: rank {rank}, expected 3"),
                });
            }
            let dims = [r.u32("tensor dims")?, r.u32("tensor dims")?, r.u32("tensor dims")?];
            let shape = Shape::new(dims[0] as usize, dims[1] as usize, dims[2] as usize);
            let raw = r
                .take(shape.numel() * 4, "tensor data")
                .map_err(|_| CheckpointError::Checksum(format!("{name}: data truncated")))?;
            let stored = r
                .u32("checksum")
                .map_err(|_| CheckpointError::Checksum(format!("{name}: checksum truncated")))?;
            if crc32fast::hash(raw) != stored {
                return Err(CheckpointError::Checksum(format!("{name}: CRC-32 mismatch")));
            }
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push((name, Tensor::from_vec(shape, data).expect("length read from dims")));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format {
                field: "trailer",
                detail: format!("{} unexpected trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Checkpoint {
            config,
            epoch,
            dev_eer,
            input_len,
            tensors,
            optimizer_step,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Checksum(format!(
                "file truncated while reading {field} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, cp.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
