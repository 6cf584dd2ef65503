use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Frames reached from one interacted frame in one direction, listed in
/// traversal order (nearest first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source: usize,
    pub direction: Direction,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationPlan {
    pub segments: Vec<Segment>,
}

impl PropagationPlan {
    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().flat_map(|s| s.targets.iter().copied())
    }

    /// Source frame owning `t`, if `t` is a propagation target.
    pub fn owner(&self, t: usize) -> Option<usize> {
        self.segments
            .iter()
            .find(|s| s.targets.contains(&t))
            .map(|s| s.source)
    }
}

/// Truncated propagation: every interacted frame propagates only up to the
/// midpoint towards each interacted neighbour.
///
/// Between adjacent interacted frames `a < b` the forward segment of `a`
/// covers `(a, mid]` and the backward segment of `b` covers `(mid, b)`, with
/// `mid = floor((a + b) / 2)`; an equidistant frame goes to the earlier
/// source. Frames before the first interacted frame are reached backward
/// from it, frames after the last forward from it.
pub fn plan_truncated_propagation(interacted: &[usize], total: usize) -> Result<PropagationPlan> {
    if interacted.is_empty() {
        return Err(Error::invalid("no interacted frames"));
    }
    if interacted.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("interacted frames must be sorted and distinct"));
    }
    if interacted.iter().any(|&t| t >= total) {
        return Err(Error::invalid("interacted frame out of range"));
    }
    let mut segments = Vec::new();
    let mut push = |source: usize, direction: Direction, targets: Vec<usize>| {
        if !targets.is_empty() {
            segments.push(Segment {
                source,
                direction,
                targets,
            });
        }
    };
    let first = interacted[0];
    push(first, Direction::Backward, (0..first).rev().collect());
    for (i, &a) in interacted.iter().enumerate() {
        match interacted.get(i + 1) {
            Some(&b) => {
                let mid = (a + b) / 2;
                push(a, Direction::Forward, (a + 1..=mid).collect());
                push(b, Direction::Backward, (mid + 1..b).rev().collect());
            }
            None => push(a, Direction::Forward, (a + 1..total).collect()),
        }
    }
    // frame order of the first target of each segment
    segments.sort_by_key(|s| (s.targets.iter().min().copied(), s.source));
    Ok(PropagationPlan { segments })
}
