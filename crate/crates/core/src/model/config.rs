use crate::kv::{KvError, KvMap};
use crate::layers::conv_output_len;

use super::ModelError;

/// Architecture hyper-parameters. The default is the 1:2:3:1 network with
/// channels (16, 32, 64, 128).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub stage_depths: Vec<usize>,
    pub stage_channels: Vec<usize>,
    pub mlp_expansion: usize,
    pub res2net_splits: usize,
    pub split_kernel: usize,
    pub use_meca: bool,
    pub meca_gamma: f64,
    pub meca_b: f64,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub downsample_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_depths: vec![1, 2, 3, 1],
            stage_channels: vec![16, 32, 64, 128],
            mlp_expansion: 4,
            res2net_splits: 4,
            split_kernel: 3,
            use_meca: true,
            meca_gamma: 2.0,
            meca_b: 1.0,
            stem_kernel: 9,
            stem_stride: 3,
            pool_kernel: 9,
            pool_stride: 9,
            downsample_kernel: 3,
        }
    }
}

const KEYS: &[&str] = &[
    "stage_depths",
    "stage_channels",
    "mlp_expansion",
    "res2net_splits",
    "split_kernel",
    "use_meca",
    "meca_gamma",
    "meca_b",
    "stem_kernel",
    "stem_stride",
    "pool_kernel",
    "pool_stride",
    "downsample_kernel",
];

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    pub const KEYS: &'static [&'static str] = KEYS;

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.stage_depths.is_empty() || self.stage_depths.len() != self.stage_channels.len() {
            return fail(format!(
                "{} stage depths for {} stage widths",
                self.stage_depths.len(),
                self.stage_channels.len()
            ));
        }
        if self.stage_depths.contains(&0) {
            return fail("every stage needs at least one block".into());
        }
        if self.res2net_splits == 0 {
            return fail("res2net_splits must be at least 1".into());
        }
        if let Some(c) = self
            .stage_channels
            .iter()
            .find(|&&c| c == 0 || c % self.res2net_splits != 0)
        {
            return fail(format!(
                "stage width {c} is not a positive multiple of {} splits",
                self.res2net_splits
            ));
        }
        if self.mlp_expansion == 0 {
            return fail("mlp_expansion must be at least 1".into());
        }
        for (name, k) in [
            ("split_kernel", self.split_kernel),
            ("stem_kernel", self.stem_kernel),
            ("downsample_kernel", self.downsample_kernel),
        ] {
            if k % 2 == 0 {
                return fail(format!("{name} must be odd, got {k}"));
            }
        }
        if self.stem_stride == 0 || self.pool_kernel == 0 || self.pool_stride == 0 {
            return fail("strides and pool kernel must be positive".into());
        }
        if !(self.meca_gamma.is_finite() && self.meca_gamma > 0.0 && self.meca_b.is_finite()) {
            return fail(format!(
                "meca_gamma {} / meca_b {} must be finite with gamma > 0",
                self.meca_gamma, self.meca_b
            ));
        }
        Ok(())
    }

    /// Time length entering each stage, or `None` once some layer would
    /// produce an empty output.
    pub fn stage_lengths(&self, input_len: usize) -> Option<Vec<usize>> {
        let mut len = conv_output_len(input_len, self.stem_kernel, self.stem_stride, self.stem_kernel / 2)?;
        let mut out = Vec::with_capacity(self.stage_depths.len());
        for i in 0..self.stage_depths.len() {
            if i > 0 {
                len = conv_output_len(len, self.pool_kernel, self.pool_stride, 0)?;
            }
            if len == 0 {
                return None;
            }
            out.push(len);
        }
        Some(out)
    }

    /// Shortest waveform the network accepts.
    pub fn min_input_len(&self) -> usize {
        let mut len = 1;
        for _ in 1..self.stage_depths.len() {
            len = (len - 1) * self.pool_stride + self.pool_kernel;
        }
        let stem_pad = self.stem_kernel / 2;
        ((len - 1) * self.stem_stride + self.stem_kernel).saturating_sub(2 * stem_pad).max(1)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut map = KvMap::default();
        map.set("stage_depths", join(&self.stage_depths));
        map.set("stage_channels", join(&self.stage_channels));
        map.set("mlp_expansion", self.mlp_expansion);
        map.set("res2net_splits", self.res2net_splits);
        map.set("split_kernel", self.split_kernel);
        map.set("use_meca", self.use_meca);
        map.set("meca_gamma", self.meca_gamma);
        map.set("meca_b", self.meca_b);
        map.set("stem_kernel", self.stem_kernel);
        map.set("stem_stride", self.stem_stride);
        map.set("pool_kernel", self.pool_kernel);
        map.set("pool_stride", self.pool_stride);
        map.set("downsample_kernel", self.downsample_kernel);
        map
    }

    /// Missing keys keep their defaults; unknown keys are rejected.
    pub fn from_kv(map: &KvMap) -> Result<Self, ModelError> {
        map.reject_unknown(KEYS)?;
        let mut c = ModelConfig::default();
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = map.parse_value(stringify!($field))? {
                    c.$field = v;
                }
            };
        }
        if let Some(v) = map.parse_list("stage_depths")? {
            c.stage_depths = v;
        }
        if let Some(v) = map.parse_list("stage_channels")? {
            c.stage_channels = v;
        }
        take!(mlp_expansion);
        take!(res2net_splits);
        take!(split_kernel);
        take!(use_meca);
        take!(meca_gamma);
        take!(meca_b);
        take!(stem_kernel);
        take!(stem_stride);
        take!(pool_kernel);
        take!(pool_stride);
        take!(downsample_kernel);
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        Self::from_kv(&KvMap::parse(text)?)
    }
}

impl From<KvError> for ModelError {
    fn from(e: KvError) -> Self {
        ModelError::Config(e.to_string())
    }
}

/// Odd kernel size nearest to `log2(C)/γ + b/γ`, rounding an even `t` up.
pub fn meca_kernel_size(channels: usize, gamma: f64, b: f64) -> usize {
    let t = ((channels.max(1) as f64).log2() / gamma + b / gamma).abs();
    2 * (t / 2.0).floor() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meca_kernel_examples() {
        assert_eq!(meca_kernel_size(16, 2.0, 1.0), 3);
        assert_eq!(meca_kernel_size(32, 2.0, 1.0), 3);
        assert_eq!(meca_kernel_size(64, 2.0, 1.0), 3);
        assert_eq!(meca_kernel_size(128, 2.0, 1.0), 5);
        assert_eq!(meca_kernel_size(1, 2.0, 1.0), 1);
    }

    #[test]
    fn meca_kernel_is_nearest_odd() {
        for c in 1..5000usize {
            for (gamma, b) in [(2.0, 1.0), (1.0, 0.0), (3.0, 2.0), (0.7, -3.0)] {
                let k = meca_kernel_size(c, gamma, b);
                let t = ((c as f64).log2() / gamma + b / gamma).abs();
                assert!(k % 2 == 1);
                let best = (0..100)
                    .map(|m| 2 * m + 1)
                    .min_by(|&x, &y| {
                        let (dx, dy) = ((x as f64 - t).abs(), (y as f64 - t).abs());
                        dx.partial_cmp(&dy).unwrap().then(y.cmp(&x))
                    })
                    .unwrap();
                assert_eq!(k, best, "C={c} t={t}");
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let mut c = ModelConfig::default();
        c.use_meca = false;
        c.stage_depths = vec![2, 1];
        c.stage_channels = vec![8, 12];
        assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(ModelConfig::from_text("").unwrap(), ModelConfig::default());
    }

    #[test]
    fn validation() {
        let bad = [
            "stage_channels = 16,30,64,128",
            "stage_depths = 1,2",
            "split_kernel = 4",
            "stage_depths = 1,0,3,1",
            "meca_gamma = 0",
            "depth = 3",
        ];
        for text in bad {
            assert!(ModelConfig::from_text(text).is_err(), "{text}");
        }
    }

    #[test]
    fn lengths() {
        let c = ModelConfig::default();
        assert_eq!(c.stage_lengths(16000), Some(vec![5334, 592, 65, 7]));
        let min = c.min_input_len();
        assert_eq!(c.stage_lengths(min).unwrap().last(), Some(&1));
        assert_eq!(c.stage_lengths(min - 1), None);
    }
}
