use std::path::{Path, PathBuf};

use cnbnn::kv::KvMap;
use cnbnn::model::ModelConfig;
use cnbnn::train::TrainConfig;

use crate::CliError;

pub const PATH_KEYS: &[&str] = &["data_dir", "dev_data_dir", "protocol", "dev_protocol", "out"];

/// Model, training and path settings for one invocation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    /// Defaults to `data_dir`.
    pub dev_data_dir: Option<PathBuf>,
    pub protocol: Option<PathBuf>,
    pub dev_protocol: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn known_keys() -> Vec<&'static str> {
        ModelConfig::KEYS
            .iter()
            .chain(TrainConfig::KEYS)
            .chain(PATH_KEYS)
            .copied()
            .collect()
    }

    /// Parses `key = value` lines; keys not belonging to any section are
    /// rejected. Relative paths are kept as written.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let map = KvMap::parse(text).map_err(CliError::usage)?;
        map.reject_unknown(&Self::known_keys()).map_err(CliError::usage)?;
        let mut model_map = KvMap::default();
        for key in map.keys().filter(|k| ModelConfig::KEYS.contains(k)) {
            model_map.set(key, map.get(key).expect("listed key"));
        }
        let model = ModelConfig::from_kv(&model_map).map_err(CliError::usage)?;
        let mut train = TrainConfig::default();
        train.update_from(&map).map_err(CliError::usage)?;
        train.validate().map_err(CliError::usage)?;
        let path = |k: &str| map.get(k).map(PathBuf::from);
        Ok(RunConfig {
            model,
            train,
            data_dir: path("data_dir"),
            dev_data_dir: path("dev_data_dir"),
            protocol: path("protocol"),
            dev_protocol: path("dev_protocol"),
            out: path("out"),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| CliError {
            message: format!("{}: {}", path.display(), e.message),
            ..e
        })
    }

    /// Built-in defaults, or the file's settings when a path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(RunConfig::default()), Self::load)
    }

    pub fn to_text(&self) -> String {
        let mut text = self.model.to_kv().to_text();
        text.push_str(&self.train.to_kv().to_text());
        let mut paths = KvMap::default();
        for (k, v) in [
            ("data_dir", &self.data_dir),
            ("dev_data_dir", &self.dev_data_dir),
            ("protocol", &self.protocol),
            ("dev_protocol", &self.dev_protocol),
            ("out", &self.out),
        ] {
            if let Some(p) = v {
                paths.set(k, p.display());
            }
        }
        text.push_str(&paths.to_text());
        text
    }
}
