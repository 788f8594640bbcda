use std::path::Path;

use crate::objective::Label;

use super::DataError;

/// A decoded utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveRecord {
    pub utt_id: String,
    /// Samples in `[−1, 1)`.
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: Option<Label>,
    pub attack: Option<String>,
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

struct Format {
    channels: u16,
    rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<Format, DataError> {
    if body.len() < 16 {
        return Err(DataError::wav("fmt", format!("chunk is {} bytes, need 16", body.len())));
    }
    let format = u16_at(body, 0);
    if format != 1 {
        return Err(DataError::wav("audio_format", format!("{format} is not PCM (1)")));
    }
    let f = Format {
        channels: u16_at(body, 2),
        rate: u32_at(body, 4),
        bits: u16_at(body, 14),
    };
    if f.channels != 1 {
        return Err(DataError::wav("num_channels", format!("{} channels, only mono is supported", f.channels)));
    }
    if f.bits != 16 {
        return Err(DataError::wav("bits_per_sample", format!("{} bits, only 16 is supported", f.bits)));
    }
    if f.rate == 0 {
        return Err(DataError::wav("sample_rate", "zero"));
    }
    let byte_rate = u32_at(body, 8);
    if byte_rate != f.rate * 2 {
        return Err(DataError::wav("byte_rate", format!("{byte_rate}, expected {}", f.rate * 2)));
    }
    let align = u16_at(body, 12);
    if align != 2 {
        return Err(DataError::wav("block_align", format!("{align}, expected 2")));
    }
    Ok(f)
}

/// Parses a mono 16-bit PCM RIFF/WAVE byte stream into raw samples and the
/// sample rate.
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<i16>, u32), DataError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(DataError::wav("riff", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(DataError::wav("wave", "missing WAVE form type"));
    }
    let mut pos = 12;
    let mut format = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        match id {
            b"fmt " => {
                if size > available {
                    return Err(DataError::wav("fmt", "truncated chunk"));
                }
                format = Some(parse_fmt(&bytes[body_start..body_start + size])?);
            }
            b"data" => {
                let f = format.ok_or_else(|| DataError::wav("fmt", "data chunk precedes fmt chunk"))?;
                if size == 0 {
                    return Err(DataError::wav("data", "empty data chunk"));
                }
                if size > available {
                    return Err(DataError::wav(
                        "data",
                        format!("truncated data chunk: header says {size} bytes, {available} present"),
                    ));
                }
                if size % 2 != 0 {
                    return Err(DataError::wav("data", format!("odd byte count {size} for 16-bit samples")));
                }
                let samples = bytes[body_start..body_start + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                return Ok((samples, f.rate));
            }
            _ => {}
        }
        pos = body_start + size + size % 2;
    }
    Err(DataError::wav("data", "no data chunk"))
}

/// Serializes raw samples as a canonical 44-byte-header WAV file.
pub fn encode_wav(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// `round(x · 32768)` saturated to the 16-bit range.
pub fn quantize(samples: &[f32]) -> Vec<i16> {
    samples
        .iter()
        .map(|&x| (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
        .collect()
}

/// Reads a WAV file; the utterance id is the file stem.
pub fn read_wav(path: &Path) -> Result<WaveRecord, DataError> {
    let bytes = std::fs::read(path).map_err(DataError::io(path))?;
    let (raw, sample_rate) = decode_wav(&bytes).map_err(|e| e.in_file(path))?;
    Ok(WaveRecord {
        utt_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        samples: raw.iter().map(|&s| s as f32 / 32768.0).collect(),
        sample_rate,
        label: None,
        attack: None,
    })
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<(), DataError> {
    std::fs::write(path, encode_wav(&quantize(samples), sample_rate)).map_err(DataError::io(path))
}
