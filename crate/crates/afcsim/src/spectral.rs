//! Spectral transfer function of the comb and FFT wavepacket propagation.
//!
//! The memory response is modeled as a passive linear filter
//! H(omega) = exp(-d(omega)/2 + i phi(omega)), where the phase is the causal
//! (Kramers-Kronig) partner of the absorption. Propagating a photon wavepacket
//! through H produces the directly transmitted pulse and the echo at 1/delta.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::comb::CombProfile;
use crate::grid::FrequencyGrid;
use crate::{AfcError, Result};

/// Complex amplitude response on a frequency grid, ascending frequency order.
#[derive(Debug, Clone)]
pub struct SpectralTransfer {
    pub grid: FrequencyGrid,
    pub amplitude_response: Vec<Complex64>,
}

/// Time-domain field after propagation, with bookkeeping of the input pulse
/// needed for efficiency metrics.
#[derive(Debug, Clone)]
pub struct TemporalTrace {
    pub t_samples: Vec<f64>,
    pub amplitude: Vec<Complex64>,
    pub intensity: Vec<f64>,
    /// Energy of the input pulse (same units as `energy()`).
    pub input_energy: f64,
    /// Intensity-weighted centroid of the input pulse in seconds.
    pub input_center: f64,
}

/// Echo observables extracted from a propagated trace.
#[derive(Debug, Clone, Copy)]
pub struct EchoMetrics {
    /// Echo-window energy divided by input energy.
    pub efficiency: f64,
    /// Intensity-weighted echo centroid relative to the input pulse center.
    pub echo_time: f64,
    /// Energy around the input pulse center divided by input energy.
    pub transmitted_fraction: f64,
}

fn fft_in_place(data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(data.len())
    } else {
        planner.plan_fft_forward(data.len())
    };
    fft.process(data);
}

/// Reorders from ascending-frequency ("natural") order to FFT order (DC first).
fn ifftshift(natural: &[Complex64]) -> Vec<Complex64> {
    let n = natural.len();
    let half = n / 2;
    let mut out = vec![Complex64::default(); n];
    for k in 0..n {
        out[k] = natural[(k + half) % n];
    }
    out
}

/// Inverse of [`ifftshift`].
fn fftshift(fft_order: &[Complex64]) -> Vec<Complex64> {
    let n = fft_order.len();
    let half = n / 2;
    let mut out = vec![Complex64::default(); n];
    for k in 0..n {
        out[(k + half) % n] = fft_order[k];
    }
    out
}

/// Causal phase phi(omega) associated with the comb absorption: the discrete
/// Hilbert-transform partner of -d(omega)/2, computed by FFT with 4x
/// zero-padding (padded with the band-edge depth to suppress wrap-around).
///
/// With this phase, exp(-d/2 + i phi) has a one-sided impulse response, so
/// propagated traces are causal and the echo appears at positive delay.
pub fn kramers_kronig_phase(comb: &CombProfile) -> Result<Vec<f64>> {
    for (i, &d) in comb.od_samples.iter().enumerate() {
        if !d.is_finite() {
            return Err(AfcError::NonFiniteSample(i));
        }
    }
    let n = comb.od_samples.len();
    let n_pad = 4 * n;
    let offset = (n_pad - n) / 2;

    // log-magnitude, padded with the edge values
    let mut s = vec![Complex64::default(); n_pad];
    let left = -0.5 * comb.od_samples[0];
    let right = -0.5 * comb.od_samples[n - 1];
    for j in 0..offset {
        s[j] = Complex64::new(left, 0.0);
    }
    for j in 0..n {
        s[offset + j] = Complex64::new(-0.5 * comb.od_samples[j], 0.0);
    }
    for j in offset + n..n_pad {
        s[j] = Complex64::new(right, 0.0);
    }

    // one-sided (causal) reconstruction of the log response
    let mut c = ifftshift(&s);
    fft_in_place(&mut c, true);
    let scale = 1.0 / n_pad as f64;
    for v in c.iter_mut() {
        *v *= scale;
    }
    for m in 1..n_pad / 2 {
        c[m] *= 2.0;
    }
    for m in n_pad / 2 + 1..n_pad {
        c[m] = Complex64::default();
    }
    fft_in_place(&mut c, false);
    let analytic = fftshift(&c);

    Ok((offset..offset + n).map(|j| analytic[j].im).collect())
}

/// Full complex transfer function H = exp(-d/2 + i phi).
pub fn transfer_function(comb: &CombProfile) -> Result<SpectralTransfer> {
    transfer_function_opts(comb, true)
}

/// Transfer function with the dispersion phase optionally disabled
/// (pure-absorption A/B mode).
pub fn transfer_function_opts(comb: &CombProfile, include_dispersion: bool) -> Result<SpectralTransfer> {
    let phase = if include_dispersion {
        kramers_kronig_phase(comb)?
    } else {
        vec![0.0; comb.od_samples.len()]
    };
    let amplitude_response = comb
        .od_samples
        .iter()
        .zip(phase.iter())
        .map(|(&d, &p)| Complex64::from_polar((-0.5 * d).exp(), p))
        .collect();
    Ok(SpectralTransfer {
        grid: comb.grid,
        amplitude_response,
    })
}

/// Gaussian input wavepacket defined directly in the frequency domain:
/// amplitude FWHM `fwhm_bandwidth`, pulse centered at time `t_center`.
pub fn gaussian_input_spectrum(grid: &FrequencyGrid, t_center: f64, fwhm_bandwidth: f64) -> Vec<Complex64> {
    let sigma = fwhm_bandwidth / (2.0 * (2.0_f64.ln() * 2.0).sqrt());
    (0..grid.n_points)
        .map(|i| {
            let f = grid.frequency(i);
            let mag = (-0.5 * (f / sigma).powi(2)).exp();
            Complex64::from_polar(mag, -2.0 * PI * f * t_center)
        })
        .collect()
}

/// Propagates an input spectrum through the transfer function and returns the
/// time-domain trace, together with the input pulse's energy and centroid.
pub fn propagate_wavepacket(input_spectrum: &[Complex64], transfer: &SpectralTransfer) -> Result<TemporalTrace> {
    let n = transfer.grid.n_points;
    if input_spectrum.len() != n {
        return Err(AfcError::GridMismatch {
            input: input_spectrum.len(),
            grid: n,
        });
    }
    let dt = transfer.grid.time_step();
    let scale = 1.0 / n as f64;

    let mut input_time = ifftshift(input_spectrum);
    fft_in_place(&mut input_time, true);
    let mut input_energy = 0.0;
    let mut centroid = 0.0;
    for (m, v) in input_time.iter().enumerate() {
        let p = scale * scale * v.norm_sqr() * dt;
        input_energy += p;
        centroid += p * m as f64 * dt;
    }
    let input_center = if input_energy > 0.0 {
        centroid / input_energy
    } else {
        0.0
    };

    let product: Vec<Complex64> = input_spectrum
        .iter()
        .zip(transfer.amplitude_response.iter())
        .map(|(x, h)| x * h)
        .collect();
    let mut out = ifftshift(&product);
    fft_in_place(&mut out, true);
    for v in out.iter_mut() {
        *v *= scale;
    }

    let t_samples: Vec<f64> = (0..n).map(|m| m as f64 * dt).collect();
    let intensity: Vec<f64> = out.iter().map(|v| v.norm_sqr()).collect();
    Ok(TemporalTrace {
        t_samples,
        amplitude: out,
        intensity,
        input_energy,
        input_center,
    })
}

impl TemporalTrace {
    pub fn time_step(&self) -> f64 {
        self.t_samples[1] - self.t_samples[0]
    }

    /// Total energy of the trace.
    pub fn energy(&self) -> f64 {
        let dt = self.time_step();
        self.intensity.iter().sum::<f64>() * dt
    }

    /// Energy within `[lo, hi]`.
    pub fn energy_in(&self, lo: f64, hi: f64) -> f64 {
        let dt = self.time_step();
        self.t_samples
            .iter()
            .zip(self.intensity.iter())
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(_, p)| p)
            .sum::<f64>()
            * dt
    }

    /// Intensity-weighted centroid within `[lo, hi]`; `None` if empty.
    pub fn centroid_in(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, p) in self.t_samples.iter().zip(self.intensity.iter()) {
            if *t >= lo && *t <= hi {
                num += t * p;
                den += p;
            }
        }
        if den > 0.0 {
            Some(num / den)
        } else {
            None
        }
    }
}

/// Extracts echo efficiency and timing from a propagated trace. The echo
/// window of width `window` is centered on the nominal rephasing time
/// `input_center + 1/delta`.
pub fn echo_metrics(trace: &TemporalTrace, delta: f64, window: f64) -> Result<EchoMetrics> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(AfcError::NonpositiveDelta(delta));
    }
    let t_echo = trace.input_center + 1.0 / delta;
    let lo = t_echo - 0.5 * window;
    let hi = t_echo + 0.5 * window;
    let t_max = *trace.t_samples.last().unwrap();
    if lo < 0.0 || hi > t_max {
        return Err(AfcError::WindowOutsideTrace { lo, hi });
    }
    let echo_energy = trace.energy_in(lo, hi);
    let transmitted = trace.energy_in(
        trace.input_center - 0.5 * window,
        trace.input_center + 0.5 * window,
    );
    let echo_centroid = trace.centroid_in(lo, hi).unwrap_or(t_echo);
    Ok(EchoMetrics {
        efficiency: echo_energy / trace.input_energy,
        echo_time: echo_centroid - trace.input_center,
        transmitted_fraction: transmitted / trace.input_energy,
    })
}

/// FFT-propagated echo efficiency of a comb for a broadband Gaussian probe.
/// Convenience wrapper used by calibration and cross-validation.
pub fn comb_echo_efficiency(comb: &CombProfile, probe_fwhm: f64, window: f64) -> Result<EchoMetrics> {
    let transfer = transfer_function(comb)?;
    let t0 = 16.0 * comb.grid.time_step();
    let input = gaussian_input_spectrum(&comb.grid, t0, probe_fwhm);
    let trace = propagate_wavepacket(&input, &transfer)?;
    echo_metrics(&trace, comb.delta, window)
}

/// Writes a temporal trace as CSV with columns `time_s,real,imag`.
pub fn write_trace_csv<P: AsRef<Path>>(path: P, trace: &TemporalTrace) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "time_s,real,imag")?;
    for (t, a) in trace.t_samples.iter().zip(trace.amplitude.iter()) {
        writeln!(f, "{:.12e},{:.12e},{:.12e}", t, a.re, a.im)?;
    }
    Ok(())
}

/// Writes a spectrum as CSV with columns `frequency_Hz,real,imag`.
pub fn write_spectrum_csv<P: AsRef<Path>>(path: P, grid: &FrequencyGrid, spectrum: &[Complex64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "frequency_Hz,real,imag")?;
    for (i, a) in spectrum.iter().enumerate() {
        writeln!(f, "{:.12e},{:.12e},{:.12e}", grid.frequency(i), a.re, a.im)?;
    }
    Ok(())
}

/// Reads a CSV written by [`write_spectrum_csv`] or [`write_trace_csv`],
/// returning the axis column and the complex samples.
pub fn read_complex_csv<P: AsRef<Path>>(path: P) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut axis = Vec::new();
    let mut vals = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        if ln == 0 {
            continue; // header
        }
        let mut cols = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| AfcError::InvalidConfig(format!("bad CSV line {}", ln + 1)))
        };
        let x = parse(cols.next())?;
        let re = parse(cols.next())?;
        let im = parse(cols.next())?;
        axis.push(x);
        vals.push(Complex64::new(re, im));
    }
    Ok((axis, vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::{analytic_echo_efficiency, build_comb, ToothShape};
    use approx::assert_abs_diff_eq;

    fn grid() -> FrequencyGrid {
        FrequencyGrid::default_memory_grid()
    }

    fn lorentzian_comb(d_m: f64, gamma: f64) -> CombProfile {
        // a "comb" carrying a single Lorentzian line, for the analytic
        // Kramers-Kronig oracle
        let g = grid();
        let mut c = build_comb(200e6, 2.0, 0.0, 0.0, 8e9, ToothShape::Square, g).unwrap();
        for (i, d) in c.od_samples.iter_mut().enumerate() {
            let x = g.frequency(i) / gamma;
            *d = d_m / (1.0 + x * x);
        }
        c
    }

    #[test]
    fn constant_absorption_has_zero_phase() {
        let c = build_comb(200e6, 2.0, 0.0, 1.3, 8e9, ToothShape::Square, grid()).unwrap();
        let phi = kramers_kronig_phase(&c).unwrap();
        for p in phi {
            assert!(p.abs() < 1e-9, "phase {p} not ~0 for constant depth");
        }
    }

    #[test]
    fn lorentzian_phase_matches_analytic_dispersion() {
        // analytic Kramers-Kronig partner of d(w) = d_m / (1 + (w/g)^2) is
        // phi(w) = (d_m/2) * (w/g) / (1 + (w/g)^2) for a causal response
        let d_m = 2.0;
        let gamma = 300e6;
        let c = lorentzian_comb(d_m, gamma);
        let phi = kramers_kronig_phase(&c).unwrap();
        let g = grid();
        // at half-width detuning w = +gamma
        let i = (0..g.n_points)
            .min_by_key(|&i| ((g.frequency(i) - gamma).abs() * 1e-3) as i64)
            .unwrap();
        let expected = 0.5 * d_m * 0.5; // (d_m/2) * x/(1+x^2) at x = 1
        let rel = (phi[i] - expected).abs() / expected.abs();
        assert!(rel < 1e-3, "phi = {} vs analytic {}", phi[i], expected);
    }

    #[test]
    fn comb_phase_is_periodic_away_from_band_edges() {
        // 250 MHz is an exact multiple of the default grid resolution, so
        // samples one period apart see identical tooth geometry
        let c = build_comb(250e6, 2.0, 1.5, 0.2, 8e9, ToothShape::Square, grid()).unwrap();
        let phi = kramers_kronig_phase(&c).unwrap();
        let g = c.grid;
        let shift = (c.delta / g.resolution()).round() as usize;
        let n = g.n_points;
        // compare within the central 2 GHz
        let lo = n / 2 - (1e9 / g.resolution()) as usize;
        let hi = n / 2 + (1e9 / g.resolution()) as usize;
        let scale = phi[lo..hi].iter().fold(0.0f64, |m, p| m.max(p.abs()));
        let mut worst = 0.0f64;
        for i in lo..hi - shift {
            worst = worst.max((phi[i] - phi[i + shift]).abs());
        }
        assert!(worst / scale < 0.05, "periodicity violation {}", worst / scale);
    }

    #[test]
    fn transparent_medium_is_identity() {
        let c = build_comb(200e6, 2.0, 0.0, 0.0, 8e9, ToothShape::Square, grid()).unwrap();
        let h = transfer_function(&c).unwrap();
        for v in &h.amplitude_response {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn transmission_magnitude_matches_depth() {
        let c = build_comb(200e6, 2.0, 1.5, 0.5, 8e9, ToothShape::Square, grid()).unwrap();
        let h = transfer_function(&c).unwrap();
        let mut min_mag = f64::INFINITY;
        for (v, &d) in h.amplitude_response.iter().zip(c.od_samples.iter()) {
            assert_abs_diff_eq!(v.norm(), (-0.5 * d).exp(), epsilon = 1e-12);
            min_mag = min_mag.min(v.norm());
        }
        assert_abs_diff_eq!(min_mag, (-0.5 * 2.0_f64).exp(), epsilon = 1e-9);
        // passivity
        assert!(h.amplitude_response.iter().all(|v| v.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn identity_transfer_preserves_trace() {
        let g = grid();
        let c = build_comb(200e6, 2.0, 0.0, 0.0, 8e9, ToothShape::Square, g).unwrap();
        let h = transfer_function(&c).unwrap();
        let input = gaussian_input_spectrum(&g, 2e-9, 10e9);
        let trace = propagate_wavepacket(&input, &h).unwrap();
        let rel = (trace.energy() - trace.input_energy).abs() / trace.input_energy;
        assert!(rel < 1e-9, "Parseval violation {rel}");
        assert_abs_diff_eq!(trace.input_center, 2e-9, epsilon = trace.time_step());
    }

    #[test]
    fn echo_appears_at_inverse_tooth_spacing() {
        let c = build_comb(200e6, 2.0, 2.0, 0.0, 8e9, ToothShape::Square, grid()).unwrap();
        let m = comb_echo_efficiency(&c, 10e9, 2e-9).unwrap();
        let dt = c.grid.time_step();
        assert!(
            (m.echo_time - 5e-9).abs() <= dt,
            "echo at {} s, expected 5 ns",
            m.echo_time
        );
        assert!(m.efficiency > 0.0);
    }

    #[test]
    fn echo_efficiency_matches_analytic_formula() {
        // the analytic expression is exact for an ideal periodic square comb;
        // FFT propagation should agree well within 5% when the probe stays
        // inside the comb bandwidth (2 GHz FWHM vs 8 GHz comb)
        for &(d_peak, f) in &[(0.5, 2.0), (2.0, 2.0), (4.0, 2.0), (2.0, 3.0), (2.0, 5.0)] {
            let c = build_comb(200e6, f, d_peak, 0.0, 8e9, ToothShape::Square, grid()).unwrap();
            let m = comb_echo_efficiency(&c, 2e9, 2e-9).unwrap();
            let eta = analytic_echo_efficiency(d_peak, f, 0.0, ToothShape::Square).unwrap();
            let rel = (m.efficiency - eta).abs() / eta;
            assert!(
                rel < 0.05,
                "d={d_peak} F={f}: fft {} vs analytic {eta}, rel {rel}",
                m.efficiency
            );
        }
    }

    #[test]
    fn output_energy_never_exceeds_input() {
        let c = build_comb(200e6, 2.0, 3.0, 0.4, 8e9, ToothShape::Square, grid()).unwrap();
        let h = transfer_function(&c).unwrap();
        let input = gaussian_input_spectrum(&c.grid, 1e-9, 10e9);
        let trace = propagate_wavepacket(&input, &h).unwrap();
        assert!(trace.energy() <= trace.input_energy * (1.0 + 1e-9));
    }

    #[test]
    fn second_order_echo_is_weaker() {
        let c = build_comb(200e6, 2.0, 2.0, 0.0, 8e9, ToothShape::Square, grid()).unwrap();
        let h = transfer_function(&c).unwrap();
        let input = gaussian_input_spectrum(&c.grid, 1e-9, 10e9);
        let trace = propagate_wavepacket(&input, &h).unwrap();
        let t0 = trace.input_center;
        let e1 = trace.energy_in(t0 + 4e-9, t0 + 6e-9);
        let e2 = trace.energy_in(t0 + 9e-9, t0 + 11e-9);
        assert!(e2 > 0.0);
        assert!(e2 < e1, "second echo {e2} not below first {e1}");
    }

    #[test]
    fn no_absorbers_no_echo() {
        // efficiency -> 0 monotonically as d_peak -> 0
        let mut last = f64::INFINITY;
        for &d in &[2.0, 1.0, 0.5, 0.25, 0.0] {
            let c = build_comb(200e6, 2.0, d, 0.0, 8e9, ToothShape::Square, grid()).unwrap();
            let m = comb_echo_efficiency(&c, 2e9, 2e-9).unwrap();
            assert!(m.efficiency < last);
            last = m.efficiency;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn halving_delta_doubles_echo_time() {
        for &delta in &[100e6, 200e6] {
            let c = build_comb(delta, 2.0, 2.0, 0.0, 8e9, ToothShape::Square, grid()).unwrap();
            let m = comb_echo_efficiency(&c, 10e9, 2e-9).unwrap();
            let dt = c.grid.time_step();
            assert!((m.echo_time - 1.0 / delta).abs() <= dt);
        }
    }

    #[test]
    fn window_outside_trace_is_error() {
        let c = build_comb(200e6, 2.0, 2.0, 0.0, 8e9, ToothShape::Square, grid()).unwrap();
        let h = transfer_function(&c).unwrap();
        let input = gaussian_input_spectrum(&c.grid, 1e-9, 10e9);
        let trace = propagate_wavepacket(&input, &h).unwrap();
        assert!(matches!(
            echo_metrics(&trace, 1.0 / (2.0 * trace.t_samples.last().unwrap()), 1e-9),
            Err(AfcError::WindowOutsideTrace { .. })
        ));
    }

    #[test]
    fn grid_mismatch_is_error() {
        let c = build_comb(200e6, 2.0, 2.0, 0.0, 8e9, ToothShape::Square, grid()).unwrap();
        let h = transfer_function(&c).unwrap();
        let input = vec![Complex64::new(1.0, 0.0); 100];
        assert!(matches!(
            propagate_wavepacket(&input, &h),
            Err(AfcError::GridMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let g = FrequencyGrid::new(4e9, 1 << 10).unwrap();
        let spec = gaussian_input_spectrum(&g, 1e-9, 1e9);
        let dir = std::env::temp_dir().join("afcsim_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("spectrum.csv");
        write_spectrum_csv(&path, &g, &spec).unwrap();
        let (axis, vals) = read_complex_csv(&path).unwrap();
        assert_eq!(vals.len(), spec.len());
        assert_abs_diff_eq!(axis[0], g.frequency(0), epsilon = 1e-3);
        for (a, b) in vals.iter().zip(spec.iter()) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
