use std::sync::Arc;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::features::{cell_descriptors, grid_extent, pool_mask, LOW_STRIDE};
use crate::tensor::Tensor;
use crate::video::{Frame, IdMask};

/// Keys and identity values of one interacted frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub frame: usize,
    pub round: usize,
    pub height: usize,
    pub width: usize,
    /// `(h·w)×D` stride-4 descriptors.
    pub keys: Tensor,
    /// `(h·w)×(M+1)` one-hot ids.
    pub values: Tensor,
}

impl MemoryEntry {
    pub fn encode(frame: &Frame, mask: &IdMask, round: usize, num_objects: usize, cfg: &EngineConfig) -> Result<Self> {
        if mask.height != frame.height || mask.width != frame.width {
            return Err(Error::invalid("memory mask size differs from frame"));
        }
        Ok(MemoryEntry {
            frame: frame.index,
            round,
            height: grid_extent(frame.height, LOW_STRIDE),
            width: grid_extent(frame.width, LOW_STRIDE),
            keys: cell_descriptors(frame, LOW_STRIDE, &cfg.features),
            values: pool_mask(mask, LOW_STRIDE, num_objects)?,
        })
    }

    pub fn tokens(&self) -> usize {
        self.keys.rows()
    }
}

/// Across-round memory: at most one entry per frame, latest round wins.
/// Immutable once built; updates produce a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMemory {
    pub round: usize,
    pub num_objects: usize,
    entries: Vec<Arc<MemoryEntry>>,
}

impl RoundMemory {
    pub fn empty(num_objects: usize) -> Self {
        RoundMemory {
            round: 0,
            num_objects,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[Arc<MemoryEntry>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, frame: usize) -> Option<&Arc<MemoryEntry>> {
        self.entries.iter().find(|e| e.frame == frame)
    }

    /// Memory restricted to the given frames.
    pub fn subset(&self, frames: &[usize]) -> RoundMemory {
        RoundMemory {
            round: self.round,
            num_objects: self.num_objects,
            entries: self
                .entries
                .iter()
                .filter(|e| frames.contains(&e.frame))
                .cloned()
                .collect(),
        }
    }
}

/// Folds the interacted frames of round `round` into `prev`.
pub fn update_memory(prev: &RoundMemory, round: usize, interacted: Vec<MemoryEntry>, cap: usize) -> Result<RoundMemory> {
    if interacted.is_empty() {
        return Err(Error::invalid("update_memory needs at least one interacted frame"));
    }
    let mut entries = prev.entries.clone();
    for mut e in interacted {
        if e.values.cols() != prev.num_objects + 1 {
            return Err(Error::invalid("memory entry has the wrong number of id channels"));
        }
        e.round = round;
        let e = Arc::new(e);
        match entries.iter_mut().find(|x| x.frame == e.frame) {
            Some(slot) => *slot = e,
            None => entries.push(e),
        }
    }
    if entries.len() > cap {
        return Err(Error::MemoryCap {
            entries: entries.len(),
            cap,
        });
    }
    entries.sort_by_key(|e| e.frame);
    Ok(RoundMemory {
        round,
        num_objects: prev.num_objects,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(frame: usize) -> MemoryEntry {
        MemoryEntry {
            frame,
            round: 0,
            height: 1,
            width: 1,
            keys: Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap(),
            values: Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap(),
        }
    }

    #[test]
    fn first_round_and_counting() {
        let m0 = RoundMemory::empty(2);
        let m1 = update_memory(&m0, 1, vec![entry(4)], 16).unwrap();
        assert_eq!(m1.len(), 1);
        let m2 = update_memory(&m1, 2, vec![entry(1), entry(9)], 16).unwrap();
        assert_eq!(m2.len(), 3);
        assert_eq!(m1.len(), 1);
    }

    #[test]
    fn reinteracted_frame_is_replaced() {
        let m1 = update_memory(&RoundMemory::empty(2), 1, vec![entry(7)], 16).unwrap();
        let m2 = update_memory(&m1, 3, vec![entry(7)], 16).unwrap();
        assert_eq!(m2.len(), 1);
        assert_eq!(m2.entry(7).unwrap().round, 3);
        assert_eq!(m1.entry(7).unwrap().round, 1);
    }

    #[test]
    fn errors() {
        let m0 = RoundMemory::empty(2);
        assert!(update_memory(&m0, 1, vec![], 16).is_err());
        assert!(matches!(
            update_memory(&m0, 1, vec![entry(0), entry(1)], 1),
            Err(Error::MemoryCap { .. })
        ));
    }
}
