//! AFC absorption profiles.
//!
//! A comb is a periodic pattern of absorption teeth of spacing `delta` and
//! width `delta / finesse`, riding on a flat background depth `d0` from
//! imperfect optical pumping, truncated to the pumped bandwidth.

use serde::{Deserialize, Serialize};

use crate::grid::FrequencyGrid;
use crate::{AfcError, Result};

/// Spectral shape of a single comb tooth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToothShape {
    /// Flat-top tooth of width `delta / finesse` (square pump modulation).
    Square,
    /// Gaussian tooth with FWHM `delta / finesse`.
    Gaussian,
}

/// Sampled optical-depth spectrum d(omega) with its comb parameters.
#[derive(Debug, Clone)]
pub struct CombProfile {
    pub delta: f64,
    pub finesse: f64,
    pub d_peak: f64,
    pub d0: f64,
    pub bandwidth: f64,
    pub tooth_shape: ToothShape,
    pub grid: FrequencyGrid,
    /// Optical depth at each grid frequency, ascending order.
    pub od_samples: Vec<f64>,
}

/// Builds a comb profile on `grid`: teeth of period `delta` and width
/// `delta / finesse`, depth `d_peak` above a background `d0`, truncated to
/// `bandwidth` (outside of which only `d0` remains).
pub fn build_comb(
    delta: f64,
    finesse: f64,
    d_peak: f64,
    d0: f64,
    bandwidth: f64,
    shape: ToothShape,
    grid: FrequencyGrid,
) -> Result<CombProfile> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(AfcError::NonpositiveDelta(delta));
    }
    if finesse < 1.0 {
        return Err(AfcError::InvalidComb(format!(
            "finesse must be >= 1, got {finesse}"
        )));
    }
    if d_peak < 0.0 || d0 < 0.0 {
        return Err(AfcError::InvalidComb(format!(
            "optical depths must be >= 0, got d_peak = {d_peak}, d0 = {d0}"
        )));
    }
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(AfcError::InvalidComb(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    grid.check_resolves(delta)?;

    let half_bw = 0.5 * bandwidth;
    let od_samples = (0..grid.n_points)
        .map(|i| {
            let f = grid.frequency(i);
            if f.abs() > half_bw {
                return d0;
            }
            d0 + d_peak * tooth_value(f, delta, finesse, shape)
        })
        .collect();

    Ok(CombProfile {
        delta,
        finesse,
        d_peak,
        d0,
        bandwidth,
        tooth_shape: shape,
        grid,
        od_samples,
    })
}

/// Unit-height tooth pattern at detuning `f`; teeth are centered at integer
/// multiples of `delta`.
fn tooth_value(f: f64, delta: f64, finesse: f64, shape: ToothShape) -> f64 {
    let width = delta / finesse;
    // offset from the nearest tooth center, in [-delta/2, delta/2)
    let x = f - (f / delta).round() * delta;
    match shape {
        ToothShape::Square => {
            if x.abs() <= 0.5 * width {
                1.0
            } else {
                0.0
            }
        }
        ToothShape::Gaussian => {
            let sigma = width / (2.0 * (2.0_f64.ln() * 2.0).sqrt());
            // neighboring teeth overlap at low finesse
            (-2..=2)
                .map(|m| {
                    let d = x - m as f64 * delta;
                    (-0.5 * (d / sigma).powi(2)).exp()
                })
                .sum::<f64>()
                .min(1.0)
        }
    }
}

/// First-order AFC recall efficiency for a comb described by its parameters:
/// eta = dt^2 exp(-dt) exp(-d0) * shape_dephasing(F) with dt = d_peak / F.
///
/// The dephasing factor is sinc^2(pi/F) for square teeth and exp(-7/F^2) for
/// gaussian teeth. Cross-validated against FFT propagation in the test suite.
pub fn analytic_echo_efficiency(d_peak: f64, finesse: f64, d0: f64, shape: ToothShape) -> Result<f64> {
    if finesse < 1.0 {
        return Err(AfcError::InvalidComb(format!(
            "finesse must be >= 1, got {finesse}"
        )));
    }
    if d_peak < 0.0 || d0 < 0.0 {
        return Err(AfcError::InvalidComb(format!(
            "optical depths must be >= 0, got d_peak = {d_peak}, d0 = {d0}"
        )));
    }
    let dt = d_peak / finesse;
    let dephasing = match shape {
        ToothShape::Square => {
            let x = std::f64::consts::PI / finesse;
            let s = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
            s * s
        }
        ToothShape::Gaussian => (-7.0 / (finesse * finesse)).exp(),
    };
    Ok(dt * dt * (-dt).exp() * (-d0).exp() * dephasing)
}

impl CombProfile {
    /// Reference comb: 200 MHz spacing, finesse 2, 8 GHz bandwidth.
    pub fn reference(d_peak: f64, d0: f64) -> Result<Self> {
        build_comb(
            200e6,
            2.0,
            d_peak,
            d0,
            8e9,
            ToothShape::Square,
            FrequencyGrid::default_memory_grid(),
        )
    }

    /// Maximum optical depth over the grid.
    pub fn max_od(&self) -> f64 {
        self.od_samples.iter().cloned().fold(0.0, f64::max)
    }
}
