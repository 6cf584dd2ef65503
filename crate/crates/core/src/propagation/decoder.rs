//! ID-queried decoding of a frame against the across-round memory, plus the
//! per-object baseline that reads one object at a time.

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::features::{cell_descriptors, grid_extent, upsample, UpsampleGuide, LOW_STRIDE};
use crate::id::{id_decode, IdLogits};
use crate::tensor::{attention_readout, Tensor};
use crate::video::{Frame, IdMask};

use super::memory::{MemoryEntry, RoundMemory};

/// Stride-4 descriptors of a frame to be decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryKeys {
    pub frame: usize,
    pub height: usize,
    pub width: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub keys: Tensor,
    /// Edge-aware upsampling weights; `None` means bilinear.
    pub guide: Option<UpsampleGuide>,
}

impl QueryKeys {
    pub fn from_frame(frame: &Frame, cfg: &EngineConfig) -> Self {
        QueryKeys {
            frame: frame.index,
            height: frame.height,
            width: frame.width,
            grid_h: grid_extent(frame.height, LOW_STRIDE),
            grid_w: grid_extent(frame.width, LOW_STRIDE),
            keys: cell_descriptors(frame, LOW_STRIDE, &cfg.features),
            guide: (cfg.guide_sigma > 0.0).then(|| UpsampleGuide::new(frame, LOW_STRIDE, cfg.guide_sigma)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub mask: IdMask,
    /// Full-resolution scores the mask was decoded from.
    pub logits: IdLogits,
    pub macs: u64,
}

struct Stacked {
    keys: Tensor,
    values: Tensor,
}

fn stack(memory: &RoundMemory, short_term: Option<&MemoryEntry>) -> Result<Stacked> {
    let entries: Vec<&MemoryEntry> = memory
        .entries()
        .iter()
        .map(|e| e.as_ref())
        .chain(short_term)
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let d = entries[0].keys.cols();
    let c = memory.num_objects + 1;
    let n: usize = entries.iter().map(|e| e.tokens()).sum();
    let mut keys = Vec::with_capacity(n * d);
    let mut values = Vec::with_capacity(n * c);
    for e in &entries {
        if e.keys.cols() != d || e.values.cols() != c {
            return Err(Error::invalid("memory entries disagree on channel counts"));
        }
        keys.extend_from_slice(e.keys.data());
        values.extend_from_slice(e.values.data());
    }
    Ok(Stacked {
        keys: Tensor::new(vec![n, d], keys)?,
        values: Tensor::new(vec![n, c], values)?,
    })
}

fn select_columns(values: &Tensor, cols: &[usize]) -> Tensor {
    let c = values.cols();
    let mut out = Vec::with_capacity(values.rows() * cols.len());
    for row in values.data().chunks(c) {
        out.extend(cols.iter().map(|&k| row[k]));
    }
    Tensor::new(vec![values.rows(), cols.len()], out).expect("finite values")
}

/// Reads the channels `cols` from memory and writes them, upsampled to full
/// resolution, into `logits`. Returns the MACs spent.
fn read_channels(
    stacked: &Stacked,
    query: &QueryKeys,
    cols: &[usize],
    cfg: &EngineConfig,
    logits: &mut IdLogits,
) -> Result<u64> {
    let payload = select_columns(&stacked.values, cols);
    let att = attention_readout(&query.keys, &stacked.keys, &payload, 1, cfg.temperature)?;
    let coarse = att.payload.expect("payload");
    let n = cols.len();
    let (full, taps) = match &query.guide {
        Some(g) => (g.apply(coarse.data(), n), UpsampleGuide::TAPS),
        None => (
            upsample(coarse.data(), query.grid_h, query.grid_w, n, LOW_STRIDE, query.height, query.width),
            4,
        ),
    };
    let c = logits.channels;
    for (px, src) in full.chunks(n).enumerate() {
        for (&k, &v) in cols.iter().zip(src) {
            logits.data[px * c + k] = v;
        }
    }
    Ok(att.macs + (query.height * query.width * n * taps) as u64)
}

fn check(memory: &RoundMemory, short_term: Option<&MemoryEntry>, query: &QueryKeys) -> Result<()> {
    if memory.is_empty() && short_term.is_none() {
        return Err(Error::EmptyMemory);
    }
    let first = memory.entries().first().map(|e| e.as_ref()).or(short_term).expect("non-empty");
    if first.height != query.grid_h || first.width != query.grid_w {
        return Err(Error::invalid("query frame size differs from memory frames"));
    }
    Ok(())
}

/// Concurrent decoder: one attention pass yields every object's channel.
/// Objects are processed in batches of `cfg.decoder_batch`; each batch
/// costs one more pass.
pub fn decode_frame(
    memory: &RoundMemory,
    short_term: Option<&MemoryEntry>,
    query: &QueryKeys,
    round: usize,
    cfg: &EngineConfig,
) -> Result<Decoded> {
    check(memory, short_term, query)?;
    let stacked = stack(memory, short_term)?;
    let m = memory.num_objects;
    let mut logits = IdLogits::zeros(query.height, query.width, m + 1);
    let mut macs = 0;
    let objects: Vec<usize> = (1..=m).collect();
    if objects.is_empty() {
        macs += read_channels(&stacked, query, &[0], cfg, &mut logits)?;
    }
    for batch in objects.chunks(cfg.decoder_batch.max(1)) {
        let mut cols = Vec::with_capacity(batch.len() + 1);
        cols.push(0);
        cols.extend_from_slice(batch);
        macs += read_channels(&stacked, query, &cols, cfg, &mut logits)?;
    }
    Ok(Decoded {
        mask: id_decode(&logits, query.frame, round)?,
        logits,
        macs,
    })
}

/// Baseline decoder: one object-versus-rest readout per object, fused by
/// the highest score (ties to the smaller id).
pub fn decode_frame_per_object(
    memory: &RoundMemory,
    short_term: Option<&MemoryEntry>,
    query: &QueryKeys,
    round: usize,
    cfg: &EngineConfig,
) -> Result<Decoded> {
    check(memory, short_term, query)?;
    let stacked = stack(memory, short_term)?;
    let m = memory.num_objects;
    let mut logits = IdLogits::zeros(query.height, query.width, m + 1);
    let mut macs = 0;
    if m == 0 {
        macs += read_channels(&stacked, query, &[0], cfg, &mut logits)?;
    }
    for k in 1..=m {
        macs += read_channels(&stacked, query, &[0, k], cfg, &mut logits)?;
    }
    Ok(Decoded {
        mask: id_decode(&logits, query.frame, round)?,
        logits,
        macs,
    })
}
