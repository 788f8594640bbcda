//! Waveform and protocol files, fixed-length batching, and a synthetic
//! corpus for desk-scale experiments.

mod batch;
mod protocol;
mod scores;
mod synth;
mod wav;

pub use batch::{assemble, batch_order, fix_length, make_batches, Batch};
pub use protocol::{load_records, parse_protocol, parse_protocol_file, write_protocol, ProtocolEntry};
pub use scores::{parse_scores, write_scores, ScoreLine};
pub use synth::{clipping_ratio, synth_corpus, synth_waves, Artifact, SynthOptions, PROTOCOL_FILE};
pub use wav::{decode_wav, encode_wav, quantize, read_wav, write_wav, WaveRecord};

use std::path::{Path, PathBuf};

/// Sample rate expected throughout.
pub const SAMPLE_RATE: u32 = 16_000;

/// Six seconds at the working sample rate.
pub const DEFAULT_LEN: usize = 96_000;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav {field}: {detail}")]
    Wav { field: &'static str, detail: String },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<DataError>,
    },
    #[error("line {line}: {detail}")]
    Line { line: usize, detail: String },
    #[error("{0}")]
    Contract(String),
}

impl DataError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
        move |source| DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn wav(field: &'static str, detail: impl Into<String>) -> Self {
        DataError::Wav {
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            e @ DataError::Io { .. } => e,
            e => DataError::InFile {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the file system rather than of file contents.
    pub fn is_io(&self) -> bool {
        match self {
            DataError::Io { .. } => true,
            DataError::InFile { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
