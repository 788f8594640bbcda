use std::path::Path;

use crate::objective::{Label, NO_ATTACK};

use super::{read_wav, DataError, WaveRecord, SAMPLE_RATE};

/// One line of a countermeasure protocol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolEntry {
    pub speaker: String,
    pub utt_id: String,
    pub attack: String,
    pub label: Label,
}

impl ProtocolEntry {
    pub fn new(speaker: &str, utt_id: &str, attack: &str, label: Label) -> Self {
        ProtocolEntry {
            speaker: speaker.to_string(),
            utt_id: utt_id.to_string(),
            attack: attack.to_string(),
            label,
        }
    }
}

/// Parses `SPEAKER UTT - ATTACK KEY` lines. Blank lines are skipped.
pub fn parse_protocol(text: &str) -> Result<Vec<ProtocolEntry>, DataError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |detail: String| DataError::Line { line: i + 1, detail };
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [speaker, utt, _, attack, key] = cols.as_slice() else {
            return Err(err(format!("expected 5 columns, found {}", cols.len())));
        };
        let label = match *key {
            "bonafide" => Label::Genuine,
            "spoof" => Label::Spoof,
            other => return Err(err(format!("unknown key {other:?}"))),
        };
        match (label, *attack == NO_ATTACK) {
            (Label::Genuine, false) => return Err(err(format!("bonafide with attack id {attack:?}"))),
            (Label::Spoof, true) => return Err(err("spoof without attack id".into())),
            _ => {}
        }
        entries.push(ProtocolEntry::new(speaker, utt, attack, label));
    }
    Ok(entries)
}

pub fn parse_protocol_file(path: &Path) -> Result<Vec<ProtocolEntry>, DataError> {
    let text = std::fs::read_to_string(path).map_err(DataError::io(path))?;
    parse_protocol(&text).map_err(|e| e.in_file(path))
}

pub fn write_protocol(entries: &[ProtocolEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{} {} - {} {}\n", e.speaker, e.utt_id, e.attack, e.label))
        .collect()
}

/// Loads `<audio_dir>/<utt>.wav` for every entry, in protocol order.
pub fn load_records(entries: &[ProtocolEntry], audio_dir: &Path) -> Result<Vec<WaveRecord>, DataError> {
    entries
        .iter()
        .map(|e| {
            let path = audio_dir.join(format!("{}.wav", e.utt_id));
            let mut r = read_wav(&path)?;
            if r.sample_rate != SAMPLE_RATE {
                return Err(DataError::wav("sample_rate", format!("{} Hz, expected {SAMPLE_RATE}", r.sample_rate))
                    .in_file(&path));
            }
            r.utt_id = e.utt_id.clone();
            r.label = Some(e.label);
            r.attack = Some(e.attack.clone());
            Ok(r)
        })
        .collect()
}
