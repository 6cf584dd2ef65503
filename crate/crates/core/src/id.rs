//! Identification mechanism: every object id owns one channel, so a single
//! attention pass carries all objects at once.

use crate::error::{Error, Result};
use crate::video::{IdMask, LabelGrid};

/// Confidence given to scribbled pixels.
pub const SCRIBBLE_CONFIDENCE: f32 = 1.0;
/// Confidence given to pixels labeled by a previous-round mask.
pub const PREV_MASK_CONFIDENCE: f32 = 0.5;

/// Per-pixel `(M+1)`-channel one-hot encoding scaled by confidence;
/// unlabeled pixels are all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct IdEmbedding {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl IdEmbedding {
    pub fn num_objects(&self) -> usize {
        self.channels - 1
    }

    pub fn pixel(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }
}

/// Per-pixel `(M+1)`-channel scores, decoded by argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct IdLogits {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl IdLogits {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        IdLogits {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn pixel(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }
}

impl From<IdEmbedding> for IdLogits {
    fn from(e: IdEmbedding) -> Self {
        IdLogits {
            height: e.height,
            width: e.width,
            channels: e.channels,
            data: e.data,
        }
    }
}

pub fn id_embed<G: LabelGrid + ?Sized>(labels: &G, num_objects: usize, confidence: f32) -> Result<IdEmbedding> {
    let (h, w) = (labels.height(), labels.width());
    let c = num_objects + 1;
    let mut data = vec![0.0; h * w * c];
    for idx in 0..h * w {
        if let Some(l) = labels.label(idx) {
            let l = l as usize;
            if l > num_objects {
                return Err(Error::invalid(format!("label {l} exceeds {num_objects} objects")));
            }
            data[idx * c + l] = confidence;
        }
    }
    Ok(IdEmbedding {
        height: h,
        width: w,
        channels: c,
        data,
    })
}

/// Index of the largest score; ties go to the smallest index.
pub fn argmax_first(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn id_decode(logits: &IdLogits, frame: usize, round: usize) -> Result<IdMask> {
    if logits.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("id_decode: non-finite logits"));
    }
    if logits.channels == 0 || logits.channels > u8::MAX as usize {
        return Err(Error::invalid("id_decode: bad channel count"));
    }
    let labels = logits
        .data
        .chunks(logits.channels)
        .map(|px| argmax_first(px) as u8)
        .collect();
    IdMask::new(frame, round, logits.height, logits.width, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{rasterize_strokes, ScribbleStroke};

    #[test]
    fn single_labeled_pixel() {
        let mut mask = IdMask::background(0, 1, 3, 3);
        mask.labels[4] = 3;
        let e = id_embed(&mask, 10, 1.0).unwrap();
        assert_eq!(e.channels, 11);
        assert_eq!(e.pixel(4)[3], 1.0);
        assert_eq!(e.pixel(4).iter().sum::<f32>(), 1.0);
        // background pixels are labeled 0 in an IdMask
        assert_eq!(e.pixel(0)[0], 1.0);
    }

    #[test]
    fn unlabeled_map_embeds_to_zero() {
        let s = rasterize_strokes(&[], 4, 4, 0, 1).unwrap();
        let e = id_embed(&s, 10, 1.0).unwrap();
        assert!(e.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_over_capacity_rejected() {
        let s = rasterize_strokes(&[ScribbleStroke::new(4, 0.0, vec![[0.0, 0.0], [1.0, 0.0]])], 2, 2, 0, 1)
            .unwrap();
        assert!(id_embed(&s, 3, 1.0).is_err());
    }

    #[test]
    fn decode_round_trip_and_tie() {
        let mask = IdMask::new(0, 1, 2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let logits: IdLogits = id_embed(&mask, 2, 1.0).unwrap().into();
        assert_eq!(id_decode(&logits, 0, 1).unwrap(), mask);
        let flat = IdLogits {
            height: 1,
            width: 1,
            channels: 4,
            data: vec![0.3; 4],
        };
        assert_eq!(id_decode(&flat, 0, 1).unwrap().labels, vec![0]);
    }
}
