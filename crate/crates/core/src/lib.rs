//! Training-free multi-cue dynamic object segmentation for turbulence-degraded
//! video.
//!
//! The pipeline runs in stages:
//!
//! 1. **Cues** – per-frame motion, skip-frame motion, semantic and background
//!    anomaly score maps ([`motion`], [`vibe`], [`cues`]).
//! 2. **Fusion** – weighted sum of the cue maps and binarization ([`fusion`]).
//! 3. **Proposals** – connected components expanded into box prompts
//!    ([`proposal`]).
//! 4. **Temporal** – isolated-box filtering and short-gap recovery
//!    ([`temporal`]).
//! 5. **Refine** – box-prompt exchange with an external refiner, or the
//!    built-in box-constrained fallback ([`refine`]).
//! 6. **Metrics** – per-frame IoU/Dice and per-video aggregation ([`metrics`]).
//!
//! [`pipeline`] wires the stages together behind a TOML config. Data-parallel
//! inner loops use rayon when the `parallel` feature is enabled (default) and
//! fall back to plain iterators otherwise; outputs are identical either way.

pub mod cues;
pub mod error;
pub mod frameio;
pub mod fusion;
pub mod metrics;
pub mod motion;
pub mod overlay;
pub mod par;
pub mod pipeline;
pub mod proposal;
pub mod refine;
pub mod synth;
pub mod temporal;
pub mod vibe;

pub use error::{Error, Result};
pub use frameio::{BinaryMask, Dims, FlowField, Frame, ScoreMap};
