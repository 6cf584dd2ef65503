use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::DEFAULT_CAPACITY;

/// Weights of the three mask-head terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    /// Across-frame readout.
    pub alpha: f32,
    /// Current-frame (enhancer) readout.
    pub beta: f32,
    /// Previous-round mask.
    pub gamma: f32,
}

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
        }
    }
}

/// Relative weights of the hand-crafted descriptor channel groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub color_weight: f32,
    pub spread_weight: f32,
    pub gradient_weight: f32,
    pub quadrant_weight: f32,
    pub position_weight: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            color_weight: 2.0,
            spread_weight: 1.0,
            gradient_weight: 0.5,
            quadrant_weight: 1.0,
            position_weight: 0.3,
        }
    }
}

/// Scales of the frame enhancer's input blocks before its random map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancerWeights {
    /// Unpooled branch, then average pooling at dilations 1, 2 and 4.
    pub branches: [f32; 4],
    /// Upsampled high level relative to the low level.
    pub context: f32,
}

impl Default for EnhancerWeights {
    fn default() -> Self {
        EnhancerWeights {
            branches: [1.0, 0.5, 0.5, 0.5],
            context: 0.5,
        }
    }
}

/// Which memory the truncated (first) propagation pass reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncatedMemory {
    /// Only the segment's source frame from the current round.
    Source,
    /// The whole across-round memory.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Maximum number of objects per session.
    pub capacity: usize,
    /// Softmax temperature on unit-normalized features.
    pub temperature: f32,
    /// Heads of the cross-frame attention stage.
    pub heads: usize,
    /// Objects decoded per concurrent decoder pass.
    pub decoder_batch: usize,
    pub fusion: FusionWeights,
    pub features: FeatureConfig,
    pub scribble_confidence: f32,
    pub prev_mask_confidence: f32,
    /// Readout mass below which evidence fades towards background.
    pub evidence_floor: f32,
    /// Colour scale of the decoder's edge-aware upsampling; 0 falls back
    /// to plain bilinear.
    pub guide_sigma: f32,
    /// Token cap of the cross-frame attention stage.
    pub token_cap: usize,
    /// Output width of the frame enhancer's position-wise map.
    pub enhancer_dim: usize,
    pub enhancer: EnhancerWeights,
    /// Fail-fast bound on across-round memory entries.
    pub memory_cap: usize,
    pub truncated_memory: TruncatedMemory,
    pub short_term: bool,
    pub repropagate: bool,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            capacity: DEFAULT_CAPACITY,
            temperature: 0.05,
            heads: 2,
            decoder_batch: DEFAULT_CAPACITY,
            fusion: FusionWeights::default(),
            features: FeatureConfig::default(),
            scribble_confidence: crate::id::SCRIBBLE_CONFIDENCE,
            prev_mask_confidence: crate::id::PREV_MASK_CONFIDENCE,
            evidence_floor: 0.25,
            guide_sigma: 0.15,
            token_cap: 4096,
            enhancer_dim: 64,
            enhancer: EnhancerWeights::default(),
            memory_cap: 1024,
            truncated_memory: TruncatedMemory::Source,
            short_term: true,
            repropagate: true,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.capacity > 254 {
            return Err(Error::invalid("capacity must be in 1..=254"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.heads == 0 || crate::features::DESCRIPTOR_DIM % self.heads != 0 {
            return Err(Error::invalid("heads must divide the descriptor width"));
        }
        if self.decoder_batch == 0 {
            return Err(Error::invalid("decoder_batch must be positive"));
        }
        if self.token_cap == 0 || self.enhancer_dim == 0 || self.memory_cap == 0 {
            return Err(Error::invalid("token_cap, enhancer_dim and memory_cap must be positive"));
        }
        if !(self.evidence_floor > 0.0) {
            return Err(Error::invalid("evidence_floor must be positive"));
        }
        let f = &self.fusion;
        let e = &self.enhancer;
        let weights = [f.alpha, f.beta, f.gamma, e.context, self.guide_sigma]
            .into_iter()
            .chain(e.branches)
            .chain([
                self.features.color_weight,
                self.features.spread_weight,
                self.features.gradient_weight,
                self.features.quadrant_weight,
                self.features.position_weight,
            ]);
        for w in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid("weights must be finite and non-negative"));
            }
        }
        Ok(())
    }
}
