//! Concurrent propagation: across-round memory, ID-queried decoding,
//! truncated propagation planning and re-propagation.

mod decoder;
mod memory;
mod plan;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use decoder::{decode_frame, decode_frame_per_object, Decoded, QueryKeys};
pub use memory::{update_memory, MemoryEntry, RoundMemory};
pub use plan::{plan_truncated_propagation, Direction, PropagationPlan, Segment};

use crate::config::{EngineConfig, TruncatedMemory};
use crate::error::{Error, Result};
use crate::ledger::{elapsed_ms, OpLedger};
use crate::video::{Frame, IdMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Interaction,
    Propagation,
    Repropagation,
}

/// Per-frame completion record streamed to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub stage: Stage,
    pub frame: usize,
    pub round: usize,
    pub wall_ms: f64,
}

pub struct RoundInput<'a> {
    pub video: &'a [Frame],
    pub interacted: &'a [usize],
    pub afi_masks: &'a BTreeMap<usize, IdMask>,
    /// `U^r`, already updated with this round's interacted frames.
    pub memory: &'a RoundMemory,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOutcome {
    /// One mask per video frame.
    pub masks: Vec<IdMask>,
    pub propagation_ms: f64,
    pub repropagation_ms: f64,
}

/// Runs the truncated pass and then (when enabled) re-propagates every
/// non-interacted frame against the full memory; the re-propagated masks
/// are final. Interacted frames keep their interaction masks.
pub fn propagate_round(
    input: &RoundInput<'_>,
    cfg: &EngineConfig,
    ledger: &mut OpLedger,
    on_event: &mut dyn FnMut(ProgressEvent),
) -> Result<PropagationOutcome> {
    let RoundInput {
        video,
        interacted,
        afi_masks,
        memory,
        round,
    } = *input;
    for t in interacted {
        if !afi_masks.contains_key(t) {
            return Err(Error::Precondition(format!("no interaction mask for frame {t}")));
        }
    }
    let plan = plan_truncated_propagation(interacted, video.len())?;
    let num_objects = memory.num_objects;
    let mut masks: Vec<Option<IdMask>> = vec![None; video.len()];
    for (&t, m) in afi_masks.iter() {
        if t < video.len() {
            masks[t] = Some(m.clone());
        }
    }
    let queries: Vec<QueryKeys> = video.iter().map(|f| QueryKeys::from_frame(f, cfg)).collect();

    let phase1 = Instant::now();
    for seg in &plan.segments {
        let seg_memory = match cfg.truncated_memory {
            TruncatedMemory::Source => memory.subset(&[seg.source]),
            TruncatedMemory::Full => memory.clone(),
        };
        let mut short: Option<MemoryEntry> = None;
        for &t in &seg.targets {
            let t0 = Instant::now();
            let dec = decode_frame(&seg_memory, short.as_ref(), &queries[t], round, cfg)?;
            let ms = elapsed_ms(t0);
            ledger.record("propagation.decode", dec.macs, ms);
            if cfg.short_term {
                short = Some(MemoryEntry::encode(&video[t], &dec.mask, round, num_objects, cfg)?);
            }
            masks[t] = Some(dec.mask);
            on_event(ProgressEvent {
                stage: Stage::Propagation,
                frame: t,
                round,
                wall_ms: ms,
            });
        }
    }
    let propagation_ms = elapsed_ms(phase1);

    let phase2 = Instant::now();
    if cfg.repropagate {
        for t in plan.targets().collect::<std::collections::BTreeSet<_>>() {
            let t0 = Instant::now();
            let dec = decode_frame(memory, None, &queries[t], round, cfg)?;
            let ms = elapsed_ms(t0);
            ledger.record("repropagation.decode", dec.macs, ms);
            masks[t] = Some(dec.mask);
            on_event(ProgressEvent {
                stage: Stage::Repropagation,
                frame: t,
                round,
                wall_ms: ms,
            });
        }
    }
    let repropagation_ms = elapsed_ms(phase2);

    let masks = masks
        .into_iter()
        .enumerate()
        .map(|(t, m)| m.ok_or_else(|| Error::Precondition(format!("frame {t} was not decoded"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(PropagationOutcome {
        masks,
        propagation_ms,
        repropagation_ms,
    })
}
