//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by array design and evaluation operations.
#[derive(Debug, Error)]
pub enum Error {
    /// An input failed a structural precondition (shape, range, emptiness).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two operands have incompatible shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A matrix required to be invertible / positive definite is not.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// The effective manifold vanishes at a grid direction, so beamformer
    /// quantities are undefined there.
    #[error("blind spot: effective steering vector is zero at theta = {theta} rad")]
    BlindSpot {
        /// Azimuth (radians) at which `‖Φ a(θ)‖ = 0`.
        theta: f64,
    },

    /// A saddle-point search could not bracket a root (degenerate spectrum).
    #[error("degenerate quadratic form: {0}")]
    DegenerateSpectrum(String),

    /// Every start of a multi-start optimization failed.
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    /// File input/output failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized matrix or table could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
