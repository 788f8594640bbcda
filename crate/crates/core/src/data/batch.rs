use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::objective::Label;
use crate::tensor::Tensor;

use super::{DataError, WaveRecord};

/// Head-truncates, or tiles the whole signal and truncates the last copy.
pub fn fix_length(samples: &[f32], target: usize) -> Result<Vec<f32>, DataError> {
    if samples.is_empty() || target == 0 {
        return Err(DataError::Contract(format!(
            "cannot align {} samples to length {target}",
            samples.len()
        )));
    }
    Ok(samples.iter().copied().cycle().take(target).collect())
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `(B, 1, L)`.
    pub waves: Tensor<f32>,
    pub labels: Vec<Label>,
    pub utt_ids: Vec<String>,
}

/// Record indices grouped into batches; the last batch may be short.
pub fn batch_order(n: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Vec<usize>>, DataError> {
    if n == 0 {
        return Err(DataError::Contract("no records to batch".into()));
    }
    if batch_size == 0 {
        return Err(DataError::Contract("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Aligns the selected records to `len` samples and stacks them.
pub fn assemble(records: &[WaveRecord], indices: &[usize], len: usize) -> Result<Batch, DataError> {
    let mut data = Vec::with_capacity(indices.len() * len);
    let mut labels = Vec::with_capacity(indices.len());
    let mut utt_ids = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = &records[i];
        let label = r
            .label
            .ok_or_else(|| DataError::Contract(format!("utterance {} has no label", r.utt_id)))?;
        data.extend(fix_length(&r.samples, len).map_err(|e| DataError::Contract(format!("{}: {e}", r.utt_id)))?);
        labels.push(label);
        utt_ids.push(r.utt_id.clone());
    }
    let waves = Tensor::from_vec((indices.len(), 1, len), data).expect("rows have the aligned length");
    Ok(Batch { waves, labels, utt_ids })
}

pub fn make_batches(
    records: &[WaveRecord],
    batch_size: usize,
    len: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Batch>, DataError> {
    batch_order(records.len(), batch_size, seed, shuffle)?
        .iter()
        .map(|idx| assemble(records, idx, len))
        .collect()
}
