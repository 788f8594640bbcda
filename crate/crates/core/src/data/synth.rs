use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::objective::{Label, NO_ATTACK};

use super::{encode_wav, quantize, write_protocol, DataError, ProtocolEntry, SAMPLE_RATE};

pub const PROTOCOL_FILE: &str = "protocol.txt";

/// Defect added to a spoofed utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Artifact {
    /// Overdrive followed by hard clipping at ±0.6.
    Clipping,
    /// 50 Hz amplitude modulation.
    Hum,
    /// Additive band-limited noise burst.
    NoiseBurst,
}

impl Artifact {
    pub const ALL: [Artifact; 3] = [Artifact::Clipping, Artifact::Hum, Artifact::NoiseBurst];

    pub fn attack_id(self) -> &'static str {
        match self {
            Artifact::Clipping => "S01",
            Artifact::Hum => "S02",
            Artifact::NoiseBurst => "S03",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub n_genuine: usize,
    pub n_spoof: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub prefix: String,
}

impl SynthOptions {
    pub fn new(n_genuine: usize, n_spoof: usize, duration_s: f64, seed: u64) -> Self {
        SynthOptions {
            n_genuine,
            n_spoof,
            duration_s,
            seed,
            prefix: "SYN".into(),
        }
    }

    fn len(&self) -> usize {
        (self.duration_s * SAMPLE_RATE as f64).round() as usize
    }
}

const CLIP_LEVEL: f64 = 0.6;
const BURST_LEVEL: f64 = 0.8;
const HUM_DEPTH: f64 = 0.9;

fn normalize(x: &mut [f64], rng: &mut ChaCha8Rng) {
    let target = rng.gen_range(0.8..0.95);
    let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / peak);
    }
}

fn voiced(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.gen_range(100.0..220.0);
    let partials: Vec<(f64, f64)> = (1..=3)
        .map(|h| (rng.gen_range(0.4..1.0) / h as f64, rng.gen_range(0.0..TAU)))
        .collect();
    let (fe, pe) = (rng.gen_range(0.7..2.5), rng.gen_range(0.0..TAU));
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.55 + 0.45 * (TAU * fe * t + pe).sin();
            let tone: f64 = partials
                .iter()
                .enumerate()
                .map(|(h, &(a, p))| a * (TAU * (h + 1) as f64 * f0 * t + p).sin())
                .sum();
            env * tone + rng.gen_range(-0.005..0.005)
        })
        .collect()
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i];
        if i >= width {
            acc -= x[i - width];
        }
        out.push(acc / width.min(i + 1) as f64);
    }
    out
}

fn apply(artifact: Artifact, x: &mut Vec<f64>, rng: &mut ChaCha8Rng) {
    let n = x.len();
    let sr = SAMPLE_RATE as f64;
    match artifact {
        Artifact::Clipping => {
            let drive = rng.gen_range(1.5..2.5);
            let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            x.iter_mut().for_each(|v| *v *= drive / peak);
            x.iter_mut().for_each(|v| *v = v.clamp(-CLIP_LEVEL, CLIP_LEVEL));
        }
        Artifact::Hum => {
            let phase = rng.gen_range(0.0..TAU);
            for (i, v) in x.iter_mut().enumerate() {
                *v *= 1.0 + HUM_DEPTH * (TAU * 50.0 * i as f64 / sr + phase).sin();
            }
            normalize(x, rng);
        }
        Artifact::NoiseBurst => {
            let white: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let low = moving_average(&white, 4);
            let lower = moving_average(&low, 32);
            let band: Vec<f64> = low.iter().zip(&lower).map(|(a, b)| a - b).collect();
            let band_peak = band.iter().fold(1e-12_f64, |m, v| m.max(v.abs()));
            let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let start = (rng.gen_range(0.05..0.4) * n as f64) as usize;
            let len = ((rng.gen_range(0.3..0.55) * n as f64) as usize).max(2);
            for k in 0..len.min(n - start) {
                let taper = 0.5 - 0.5 * (TAU * k as f64 / (len - 1) as f64).cos();
                x[start + k] += BURST_LEVEL * peak * taper * band[start + k] / band_peak;
            }
            normalize(x, rng);
        }
    }
}

/// Generates the corpus in memory: protocol entries and samples in
/// `[−1, 1]`, identical to what [`synth_corpus`] writes after 16-bit
/// quantization.
pub fn synth_waves(opts: &SynthOptions) -> Result<Vec<(ProtocolEntry, Vec<i16>)>, DataError> {
    if opts.n_genuine == 0 || opts.n_spoof == 0 {
        return Err(DataError::Contract("synthetic corpus needs at least one utterance per class".into()));
    }
    let n = opts.len();
    if n == 0 {
        return Err(DataError::Contract(format!("duration {} s yields no samples", opts.duration_s)));
    }
    let total = opts.n_genuine + opts.n_spoof;
    Ok((0..total)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let mut x = voiced(n, &mut rng);
            let utt = format!("{}_{i:05}", opts.prefix);
            let speaker = format!("{}_SPK{}", opts.prefix, i % 4);
            let entry = if i < opts.n_genuine {
                normalize(&mut x, &mut rng);
                ProtocolEntry::new(&speaker, &utt, NO_ATTACK, Label::Genuine)
            } else {
                let artifact = Artifact::ALL[(i - opts.n_genuine) % 3];
                apply(artifact, &mut x, &mut rng);
                ProtocolEntry::new(&speaker, &utt, artifact.attack_id(), Label::Spoof)
            };
            let samples: Vec<f32> = x.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect();
            (entry, quantize(&samples))
        })
        .collect())
}

/// Writes `<utt>.wav` files and a protocol into `out_dir`.
pub fn synth_corpus(opts: &SynthOptions, out_dir: &Path) -> Result<Vec<ProtocolEntry>, DataError> {
    let waves = synth_waves(opts)?;
    std::fs::create_dir_all(out_dir).map_err(DataError::io(out_dir))?;
    for (entry, samples) in &waves {
        let path = out_dir.join(format!("{}.wav", entry.utt_id));
        std::fs::write(&path, encode_wav(samples, SAMPLE_RATE)).map_err(DataError::io(&path))?;
    }
    let entries: Vec<ProtocolEntry> = waves.into_iter().map(|(e, _)| e).collect();
    let path = out_dir.join(PROTOCOL_FILE);
    std::fs::write(&path, write_protocol(&entries)).map_err(DataError::io(&path))?;
    Ok(entries)
}

/// Fraction of samples within one quantization step of the peak
/// magnitude; large for hard-clipped signals.
pub fn clipping_ratio(samples: &[f32]) -> f64 {
    let peak = samples.iter().fold(0.0_f32, |m, v| m.max(v.abs()));
    if samples.is_empty() || peak == 0.0 {
        return 0.0;
    }
    let near = samples.iter().filter(|v| v.abs() >= peak - 1.5 / 32768.0).count();
    near as f64 / samples.len() as f64
}
