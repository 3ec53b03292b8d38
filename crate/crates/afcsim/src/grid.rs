//! Frequency grid shared by the spectral engine.
//!
//! Frequencies are relative detunings from the photon carrier, so the grid is
//! symmetric about zero. The grid fixes both the spectral resolution
//! (`span / n_points`) and, through the FFT, the time window (`n_points / span`)
//! and time step (`1 / span`) of every temporal trace derived from it.

use serde::{Deserialize, Serialize};

use crate::{AfcError, Result};

/// Uniform detuning grid with `n_points` samples covering `span` Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    /// Carrier offset in Hz. Zero in the relative-detuning convention; kept so
    /// exported spectra can be tagged with an absolute frequency.
    pub center_frequency: f64,
    /// Total width of the grid in Hz.
    pub span: f64,
    /// Number of samples; must be a power of two and at least 2^10.
    pub n_points: usize,
}

impl FrequencyGrid {
    pub fn new(span: f64, n_points: usize) -> Result<Self> {
        if span.is_nan() || span <= 0.0 {
            return Err(AfcError::InvalidGrid(format!("span must be > 0, got {span}")));
        }
        if n_points < 1 << 10 {
            return Err(AfcError::InvalidGrid(format!(
                "n_points must be >= 1024, got {n_points}"
            )));
        }
        if !n_points.is_power_of_two() {
            return Err(AfcError::InvalidGrid(format!(
                "n_points must be a power of two, got {n_points}"
            )));
        }
        Ok(Self {
            center_frequency: 0.0,
            span,
            n_points,
        })
    }

    /// Default grid: 2^16 points over 16 GHz (about 244 kHz resolution,
    /// 62.5 ps time step, 4.1 us time window).
    pub fn default_memory_grid() -> Self {
        Self::new(16e9, 1 << 16).expect("default grid parameters are valid")
    }

    /// Frequency resolution in Hz.
    pub fn resolution(&self) -> f64 {
        self.span / self.n_points as f64
    }

    /// Time step of the conjugate time axis in seconds.
    pub fn time_step(&self) -> f64 {
        1.0 / self.span
    }

    /// Total length of the conjugate time axis in seconds.
    pub fn time_window(&self) -> f64 {
        self.n_points as f64 / self.span
    }

    /// Detuning of sample `i`, ascending from `-span/2`.
    pub fn frequency(&self, i: usize) -> f64 {
        -0.5 * self.span + i as f64 * self.resolution()
    }

    /// All detunings in ascending order.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.frequency(i)).collect()
    }

    /// Checks that a comb of tooth spacing `delta` is resolved: resolution
    /// must be at most `delta / 16`.
    pub fn check_resolves(&self, delta: f64) -> Result<()> {
        let limit = delta / 16.0;
        if self.resolution() > limit {
            return Err(AfcError::GridTooCoarse {
                resolution: self.resolution(),
                limit,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_resolves_reference_comb() {
        let g = FrequencyGrid::default_memory_grid();
        assert!(g.resolution() < 200e6 / 16.0);
        g.check_resolves(200e6).unwrap();
        // time window long enough for a 50 ns echo plus margin
        assert!(g.time_window() > 150e-9);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(FrequencyGrid::new(-1.0, 1 << 12).is_err());
        assert!(FrequencyGrid::new(1e9, 100).is_err());
        assert!(FrequencyGrid::new(1e9, 3000).is_err());
    }

    #[test]
    fn coarse_grid_rejected_for_fine_comb() {
        let g = FrequencyGrid::new(16e9, 1 << 10).unwrap();
        assert!(g.check_resolves(20e6).is_err());
    }

    #[test]
    fn frequency_axis_is_symmetric() {
        let g = FrequencyGrid::new(8e9, 1 << 12).unwrap();
        let f = g.frequencies();
        assert_eq!(f.len(), 1 << 12);
        assert!((f[0] + 4e9).abs() < 1.0);
        assert!((f[f.len() - 1] - (4e9 - g.resolution())).abs() < 1.0);
    }
}
