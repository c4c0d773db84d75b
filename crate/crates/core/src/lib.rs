//! Same-photograph confound auditing for face-pair and kinship datasets.
//!
//! Pairs of faces cut from one photograph share illumination, white balance,
//! sensor noise and resolution. A classifier can learn "same photo" from those
//! cues alone. This crate builds same-photo pair datasets, trains a small pair
//! scorer on photographic-cue features (or on external descriptors), and
//! measures how much of a kinship benchmark that scorer solves.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod pairs;
pub mod pipeline;
pub mod rng;
pub mod scorer;
pub mod synth;

pub use error::{Error, Result};
