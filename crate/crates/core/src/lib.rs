//! Interactive video object segmentation engine.
//!
//! Users scribble on one or more frames per round; the interaction stage
//! turns those scribbles into masks for the scribbled frames, and the
//! propagation stage carries every object to the rest of the video in a
//! single pass per frame, reading an across-round memory of all frames
//! ever scribbled.

pub mod afi;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod id;
pub mod io;
pub mod ledger;
pub mod propagation;
pub mod rng;
pub mod session;
pub mod synth;
pub mod tensor;
pub mod video;

pub use config::EngineConfig;
pub use error::{Error, Result};
pub use id::{id_decode, id_embed, IdEmbedding, IdLogits};
pub use tensor::{bilinear_sample, multi_head_attention, softmax_rows, SamplePoint, Tensor};
pub use video::{
    rasterize_strokes, relabel, Frame, IdMask, Permutation, RoundRecord, ScribbleDoc, ScribbleMap, ScribbleStroke,
    SessionState,
};
pub use session::{Lifecycle, Session};
