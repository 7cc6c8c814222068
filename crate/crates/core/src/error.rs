//! Error type shared across the pipeline.

use crate::pose::PoseSE3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file violated its declared binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    /// Two inputs that must share a grid layout or length do not.
    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    /// No cell was valid in both matrices after warping.
    #[error("no overlapping valid cells")]
    NoOverlap,

    /// An evaluation had nothing to compare.
    #[error("empty report: {0}")]
    EmptyReport(String),

    /// The scene does not constrain all six pose degrees of freedom.
    #[error("insufficient geometry: {0}")]
    InsufficientGeometry(String),

    /// Registration failed to improve; carries the last estimate.
    #[error("registration diverged after {iterations} iterations (rms {rms:.6e})")]
    Diverged {
        last_pose: PoseSE3,
        iterations: usize,
        rms: f64,
    },

    #[error("map window is empty")]
    EmptyMap,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}
