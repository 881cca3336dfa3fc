//! Design and evaluation of compressive antenna arrays for azimuth
//! direction-of-arrival (DOA) estimation.
//!
//! A compressive array combines the outputs of `N` antenna elements into
//! `M < N` receiver channels through an analog network of power splitters,
//! phase shifters and combiners, described by a combining matrix `Φ`. This
//! crate provides:
//!
//! * [`manifold`] — array geometries, steering vectors and their angular
//!   derivatives, azimuth sampling grids;
//! * [`combiner`] — the combining matrix `Φ`, its structural constraints,
//!   random baselines and text serialization;
//! * [`scf_design`] — combining-network design by fitting the spatial
//!   correlation function to a target, including the closed-form solution
//!   available on orthogonal grids;
//! * [`performance`] — Cramér-Rao bounds, correlation profiles and sidelobe
//!   statistics, SNR comparison formulas, and a sparse-array baseline
//!   designer;
//! * [`false_detect`] — the analytic probability that a sidelobe peak beats
//!   the mainlobe, computed from the indefinite quadratic form of the
//!   beamformer statistic via saddle-point integration;
//! * [`crb_design`] — CRB-minimizing design under a false-detection
//!   probability constraint;
//! * [`simulate`] — Monte Carlo snapshot synthesis, beamformer estimation,
//!   empirical error rates, random-kernel CCDF studies and the adaptive
//!   refocusing loop.
//!
//! All randomized operations take explicit seeds and produce results that are
//! reproducible bitwise regardless of thread count.

pub mod combiner;
pub mod crb_design;
pub mod error;
pub mod false_detect;
pub mod linalg;
pub mod manifold;
pub mod optim;
pub mod performance;
pub mod rng;
pub mod scf_design;
pub mod simulate;

pub use error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix.
pub type CMat = ndarray::Array2<C64>;

/// Dense complex vector.
pub type CVec = ndarray::Array1<C64>;
