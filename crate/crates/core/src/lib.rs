//! Sound event detection workbench.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`frontend`] turns 10 s PCM clips into 640 x 64 mel spectrograms.
//! 2. [`cnmf`] extracts per-class convolutive dictionaries from strongly
//!    labeled clips and approximates frame-level pseudo labels for weakly
//!    labeled ones.
//! 3. [`model`] holds the two Convolutional Macaron Nets: a frame level
//!    model (no temporal compression) and a clip level model (compressed
//!    time axis), with hand-written reverse-mode gradients.
//! 4. [`losses`] and [`train`] drive the two-phase semi-supervised training.
//! 5. [`eval`] decodes frame probabilities into events and scores them.
//!
//! [`data`] synthesizes a toy dataset and reads/writes DCASE-style manifests,
//! and [`pipeline`] wires the stages together behind file-based artifacts.

pub mod cnmf;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod losses;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod tensor_io;
pub mod train;

pub use error::{Error, Result};

/// Clip duration every input is normalized to, in seconds.
pub const CLIP_SECONDS: f64 = 10.0;
/// Frames per normalized clip.
pub const N_FRAMES: usize = 640;
/// Seconds covered by one output frame.
pub const FRAME_SECONDS: f64 = CLIP_SECONDS / N_FRAMES as f64;
