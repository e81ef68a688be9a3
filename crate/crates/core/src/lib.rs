//! Patch-based spatial authorship attribution for scanned paintings.
//!
//! The toolkit tiles canvases into labeled 300x300 patches, trains a compact
//! convolutional classifier under leave-one-painting-out cross-validation,
//! aggregates patch verdicts into painting-level attributions, and flags
//! mixed-authorship regions through conditional predictive entropy. A
//! procedural brushstroke corpus ships with the crate so the whole pipeline
//! can be exercised end to end without any scanned data.

pub mod baseline;
pub mod checkpoint;
pub mod cli;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod heatmap;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
