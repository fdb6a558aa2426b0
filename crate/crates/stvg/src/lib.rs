//! End-to-end spatio-temporal video grounding at desk scale: given a short
//! video and a text query, predict a tube — per-frame bounding boxes plus
//! start/end frames — for the described object.
//!
//! The pipeline is a slow-fast video-text transformer encoder (joint
//! visual-text self-attention over sparsely sampled clips, plus a
//! lightweight per-frame branch), a space-time decoder whose per-frame time
//! queries mix temporal self-attention with time-aligned cross-attention,
//! prediction heads for boxes and start/end distributions, and a four-term
//! loss (L1 + gIoU on boxes, KL to quantized-Gaussian boundary targets, and
//! a guided attention penalty). Training runs on a procedurally generated
//! moving-shapes corpus; `metrics` implements the tube-IoU evaluation suite.

pub mod backbone;
pub mod checkpoint;
pub mod complexity;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod inspect;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod train;
pub mod vocab;

pub use config::{Aggregation, DecoderAblation, LossWeights, RunConfig};
pub use error::{Error, Result};
pub use model::{ForwardOutput, GroundingModel, ModelSettings};
