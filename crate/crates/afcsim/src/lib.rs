// index-matched loops over small fixed-size matrices read more naturally
// than iterator chains here
#![allow(clippy::needless_range_loop)]

//! Simulation of an atomic-frequency-comb (AFC) quantum memory for heralded
//! telecom-wavelength polarization qubits.
//!
//! The crate is organized around the experiment it models:
//!
//! - [`grid`] / [`comb`] / [`spectral`]: AFC absorption profiles, the causal
//!   complex transfer function, and FFT wavepacket propagation producing
//!   transmitted and echo pulses.
//! - [`dicke`]: direct sum over discrete atomic detunings, used as an
//!   independent oracle for echo timing and intensity.
//! - [`polarization`]: Jones-calculus qubit preparation, waveplates, the pump
//!   scrambler, and polarization-dependent memory/detector efficiencies.
//! - [`source`]: heralded SPDC pair source statistics, detectors with
//!   efficiency/jitter/dark counts, TDC histogramming and coincidence logic.
//! - [`analysis`]: visibility fits, fidelity from visibilities, g²
//!   cross-correlation, and qubit state tomography.
//! - [`harness`]: seeded, reproducible experiment scenarios binding the above
//!   into figure-level reproductions, plus calibration.

pub mod analysis;
pub mod comb;
pub mod dicke;
pub mod grid;
pub mod harness;
pub mod polarization;
pub mod source;
pub mod spectral;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum AfcError {
    #[error("frequency grid too coarse: resolution {resolution:.3e} Hz exceeds delta/16 = {limit:.3e} Hz")]
    GridTooCoarse { resolution: f64, limit: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("tooth spacing must be positive, got {0}")]
    NonpositiveDelta(f64),
    #[error("invalid comb parameter: {0}")]
    InvalidComb(String),
    #[error("non-finite sample in optical-depth array at index {0}")]
    NonFiniteSample(usize),
    #[error("input spectrum length {input} does not match grid ({grid} points)")]
    GridMismatch { input: usize, grid: usize },
    #[error("analysis window [{lo:.3e}, {hi:.3e}] s lies outside the trace")]
    WindowOutsideTrace { lo: f64, hi: f64 },
    #[error("comb has no absorption; cannot sample an ensemble")]
    EmptyComb,
    #[error("state is not normalized: |h|^2 + |v|^2 = {0}")]
    Unnormalized(f64),
    #[error("invalid ratio {name} = {value}; must lie in {range}")]
    InvalidRatio {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("degenerate design matrix in visibility fit")]
    DegenerateFit,
    #[error("need at least {need} distinct settings, got {got}")]
    TooFewSettings { need: usize, got: usize },
    #[error("zero counts: {0}")]
    ZeroCounts(&'static str),
    #[error("calibration target {target} outside achievable range [{lo}, {hi}]")]
    TargetUnreachable { target: f64, lo: f64, hi: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config hash mismatch: report carries {expected}, recomputed {actual}")]
    ConfigHashMismatch { expected: String, actual: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AfcError>;
