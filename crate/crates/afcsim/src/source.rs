//! Heralded SPDC pair source statistics, detector models and coincidence
//! counting.
//!
//! The source is a statistical model: per-pulse pair numbers follow
//! single-mode thermal statistics (negative binomial for M > 1 spectral
//! modes). Detectors apply efficiency, Gaussian timing jitter, Poisson dark
//! counts and dead time; AND-gate coincidence logic and TDC histogramming
//! mirror the electronics of the experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::Result;

/// Heralded pair source parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairSourceParams {
    /// Mean pair number per pump pulse.
    pub mu: f64,
    /// Pulse repetition rate, Hz.
    pub rep_rate: f64,
    /// Filtered signal bandwidth, Hz.
    pub signal_bandwidth: f64,
    /// Collection/transmission efficiency of the idler (herald) arm before
    /// its detector.
    pub idler_chain_efficiency: f64,
    /// Number of thermal spectral modes after filtering; 1 recovers
    /// single-mode thermal statistics.
    pub modes: u32,
}

impl Default for PairSourceParams {
    fn default() -> Self {
        Self {
            mu: 0.0763,
            rep_rate: 80e6,
            signal_bandwidth: 10e9,
            idler_chain_efficiency: 1.0,
            modes: 1,
        }
    }
}

/// Single-photon detector parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Detection efficiency in [0, 1].
    pub efficiency: f64,
    /// Gaussian timing-jitter standard deviation, seconds.
    pub jitter_sigma: f64,
    /// Dark count rate, Hz.
    pub dark_rate: f64,
    /// Dead time after each recorded tag, seconds.
    pub dead_time: f64,
}

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 sqrt(2 ln 2)

impl DetectorParams {
    pub fn from_fwhm(efficiency: f64, jitter_fwhm: f64, dark_rate: f64, dead_time: f64) -> Self {
        Self {
            efficiency,
            jitter_sigma: jitter_fwhm / FWHM_TO_SIGMA,
            dark_rate,
            dead_time,
        }
    }

    /// Si avalanche photodiode of the herald arm: 60% efficiency, 600 ps
    /// jitter FWHM.
    pub fn si_apd() -> Self {
        Self::from_fwhm(0.60, 600e-12, 100.0, 50e-9)
    }

    /// SNSPD of the qubit analyzer: 60% system efficiency, 350 ps jitter FWHM.
    pub fn snspd() -> Self {
        Self::from_fwhm(0.60, 350e-12, 10.0, 20e-9)
    }
}

/// One recorded detector click.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeTag {
    pub time: f64,
    /// Pump pulse the photon originated from; `None` for dark counts.
    pub pulse: Option<u64>,
}

/// Ordered click record of one detector channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTagStream {
    pub channel: u32,
    pub tags: Vec<TimeTag>,
}

impl TimeTagStream {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.tags.iter().map(|t| t.time).collect()
    }

    /// Writes the stream as CSV with columns `time_s,channel`.
    pub fn write_csv<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "time_s,channel")?;
        for t in &self.tags {
            writeln!(f, "{:.12e},{}", t.time, self.channel)?;
        }
        Ok(())
    }
}

/// Heralded coincidence bookkeeping feeding the g2 estimator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoincidenceSet {
    pub n_si: u64,
    pub n_s: u64,
    pub n_i: u64,
    pub n_pulses: u64,
    pub window: f64,
}

/// Draws per-pulse pair numbers from thermal (M = 1) or negative-binomial
/// (M > 1) statistics. Deterministic under the seed.
pub fn sample_pair_emissions(params: &PairSourceParams, n_pulses: u64, seed: u64) -> Vec<u32> {
    assert!(n_pulses >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = params.modes.max(1);
    let mu_mode = params.mu / modes as f64;
    // thermal P(n) = mu^n / (1+mu)^{n+1} is geometric with success
    // probability 1/(1+mu)
    let ratio = mu_mode / (1.0 + mu_mode);
    let log_ratio = ratio.ln();
    (0..n_pulses)
        .map(|_| {
            if params.mu <= 0.0 {
                return 0;
            }
            let mut n = 0u32;
            for _ in 0..modes {
                let u: f64 = rng.gen();
                n += ((1.0 - u).ln() / log_ratio).floor() as u32;
            }
            n
        })
        .collect()
}

/// Binomial thinning of per-pulse photon numbers with survival probability
/// `pass_fraction` (spectral filtering to the memory bandwidth).
pub fn apply_bandwidth_filter(n_photons: &[u32], pass_fraction: f64, seed: u64) -> Vec<u32> {
    assert!((0.0..=1.0).contains(&pass_fraction));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    n_photons
        .iter()
        .map(|&n| {
            if pass_fraction >= 1.0 {
                return n;
            }
            let mut kept = 0;
            for _ in 0..n {
                if rng.gen::<f64>() < pass_fraction {
                    kept += 1;
                }
            }
            kept
        })
        .collect()
}

/// Applies a detector model to true photon arrivals: Bernoulli survival at
/// `efficiency * efficiency_scale`, Gaussian jitter, Poisson dark counts over
/// `duration`, then dead-time enforcement on the merged, time-ordered record.
pub fn detect_stream(
    arrivals: &[TimeTag],
    params: &DetectorParams,
    duration: f64,
    efficiency_scale: f64,
    channel: u32,
    seed: u64,
) -> TimeTagStream {
    assert!(duration > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = (params.efficiency * efficiency_scale).clamp(0.0, 1.0);
    let mut tags: Vec<TimeTag> = Vec::new();
    let jitter = if params.jitter_sigma > 0.0 {
        Some(Normal::new(0.0, params.jitter_sigma).unwrap())
    } else {
        None
    };
    for a in arrivals {
        if rng.gen::<f64>() < p {
            let t = match &jitter {
                Some(n) => a.time + n.sample(&mut rng),
                None => a.time,
            };
            tags.push(TimeTag { time: t, pulse: a.pulse });
        }
    }
    if params.dark_rate > 0.0 {
        let mean = params.dark_rate * duration;
        let n_dark = sample_poisson(&mut rng, mean);
        for _ in 0..n_dark {
            tags.push(TimeTag {
                time: rng.gen::<f64>() * duration,
                pulse: None,
            });
        }
    }
    tags.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    // dead time: drop tags that follow a recorded one too closely
    let mut kept: Vec<TimeTag> = Vec::with_capacity(tags.len());
    for t in tags {
        if let Some(last) = kept.last() {
            if t.time - last.time < params.dead_time {
                continue;
            }
        }
        kept.push(t);
    }
    TimeTagStream { channel, tags: kept }
}

pub(crate) fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    // inversion for small means, normal approximation for large
    if mean <= 0.0 {
        0
    } else if mean < 30.0 {
        let l = (-mean).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= rng.gen::<f64>();
            if p <= l {
                return k;
            }
            k += 1;
        }
    } else {
        let n: f64 = Normal::new(mean, mean.sqrt()).unwrap().sample(rng);
        n.round().max(0.0) as u64
    }
}

/// TDC histogram of signal-minus-reference arrival times.
#[derive(Debug, Clone, PartialEq)]
pub struct TdcHistogram {
    /// Bin width, seconds (80 ps in the experiment).
    pub bin: f64,
    /// Histogram covers offsets in [-range, +range).
    pub range: f64,
    pub counts: Vec<u64>,
}

impl TdcHistogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        -self.range + (i as f64 + 0.5) * self.bin
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sum of counts in the `n_bins` bins closest to `offset` (the "summed
    /// over 5 bins" counting convention).
    pub fn window_sum(&self, offset: f64, n_bins: usize) -> u64 {
        let center = ((offset + self.range) / self.bin).floor() as i64;
        let half = n_bins as i64 / 2;
        let mut sum = 0;
        for i in center - half..=center + half {
            if i >= 0 && (i as usize) < self.counts.len() {
                sum += self.counts[i as usize];
            }
        }
        sum
    }

    /// Writes the histogram as CSV with columns `bin_center_s,counts`.
    pub fn write_csv<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "bin_center_s,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(f, "{:.12e},{}", self.bin_center(i), c)?;
        }
        Ok(())
    }
}

/// Bins signal-minus-reference time differences. Every (signal, reference)
/// pair with offset inside [-range, +range) contributes one count.
pub fn tdc_histogram(stream: &TimeTagStream, reference: &[f64], bin: f64, range: f64) -> TdcHistogram {
    assert!(bin > 0.0 && range > 0.0);
    let n_bins = (2.0 * range / bin).ceil() as usize;
    let mut counts = vec![0u64; n_bins];
    let mut refs = reference.to_vec();
    refs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for tag in &stream.tags {
        let lo = refs.partition_point(|&r| r < tag.time - range);
        for &r in &refs[lo..] {
            let dt = tag.time - r;
            if dt < -range {
                break;
            }
            if dt < range {
                let i = ((dt + range) / bin).floor() as usize;
                if i < n_bins {
                    counts[i] += 1;
                }
            }
        }
    }
    TdcHistogram { bin, range, counts }
}

/// AND-gate coincidence counting: greedy one-to-one matching in time order of
/// herald and signal tags with |t_s - t_h - expected_delay| <= window / 2.
pub fn coincide(
    herald: &TimeTagStream,
    signal: &TimeTagStream,
    window: f64,
    expected_delay: f64,
    n_pulses: u64,
) -> CoincidenceSet {
    assert!(window > 0.0);
    let half = 0.5 * window;
    let mut n_si = 0u64;
    let mut j = 0usize;
    for h in &herald.tags {
        let target = h.time + expected_delay;
        while j < signal.tags.len() && signal.tags[j].time < target - half {
            j += 1;
        }
        if j < signal.tags.len() && (signal.tags[j].time - target).abs() <= half {
            n_si += 1;
            j += 1; // each signal tag pairs at most once
        }
    }
    CoincidenceSet {
        n_si,
        n_s: signal.len() as u64,
        n_i: herald.len() as u64,
        n_pulses,
        window,
    }
}

/// Experiment duty cycle: 500 ms optical pumping, 300 ms wait, 700 ms storage
/// per cycle, so only 700/1500 of wall time accumulates counts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DutyCycle {
    pub pump: f64,
    pub wait: f64,
    pub storage: f64,
}

impl Default for DutyCycle {
    fn default() -> Self {
        Self {
            pump: 0.5,
            wait: 0.3,
            storage: 0.7,
        }
    }
}

impl DutyCycle {
    /// Fraction of wall time available for storage measurements.
    pub fn storage_fraction(&self) -> f64 {
        self.storage / (self.pump + self.wait + self.storage)
    }

    /// Scales an in-storage rate to a wall-clock rate.
    pub fn effective_rate(&self, storage_rate: f64) -> f64 {
        storage_rate * self.storage_fraction()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn thermal_pmf(mu: f64, n: u32) -> f64 {
        mu.powi(n as i32) / (1.0 + mu).powi(n as i32 + 1)
    }

    fn chi2_crit(dof: f64) -> f64 {
        ChiSquared::new(dof).unwrap().inverse_cdf(0.99)
    }

    #[test]
    fn zero_mu_gives_no_pairs() {
        let p = PairSourceParams {
            mu: 0.0,
            ..Default::default()
        };
        assert!(sample_pair_emissions(&p, 1000, 0).iter().all(|&n| n == 0));
    }

    #[test]
    fn thermal_mean_matches_mu() {
        let p = PairSourceParams {
            mu: 0.08,
            ..Default::default()
        };
        let n = 1_000_000u64;
        let counts = sample_pair_emissions(&p, n, 42);
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n as f64;
        // thermal variance is mu (1 + mu)
        let sigma = (0.08 * 1.08 / n as f64).sqrt();
        assert!((mean - 0.08).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn thermal_distribution_chi_square() {
        let mu = 0.1;
        let p = PairSourceParams {
            mu,
            ..Default::default()
        };
        let n = 1_000_000u64;
        let counts = sample_pair_emissions(&p, n, 7);
        let mut hist = [0u64; 5];
        for &c in &counts {
            hist[(c as usize).min(4)] += 1;
        }
        let mut chi2 = 0.0;
        for k in 0..5 {
            let pk = if k < 4 {
                thermal_pmf(mu, k as u32)
            } else {
                1.0 - (0..4).map(|j| thermal_pmf(mu, j)).sum::<f64>()
            };
            let expected = pk * n as f64;
            chi2 += (hist[k] as f64 - expected).powi(2) / expected;
        }
        assert!(chi2 < chi2_crit(4.0), "chi2 = {chi2}");
    }

    #[test]
    fn thinning_preserves_thermal_family() {
        // thinning thermal(mu) by p yields thermal(p mu)
        let mu = 0.2;
        let pass = 0.8;
        let p = PairSourceParams {
            mu,
            ..Default::default()
        };
        let n = 1_000_000u64;
        let counts = sample_pair_emissions(&p, n, 3);
        let thinned = apply_bandwidth_filter(&counts, pass, 4);
        let mu_eff = mu * pass;
        let mut hist = [0u64; 5];
        for &c in &thinned {
            hist[(c as usize).min(4)] += 1;
        }
        let mut chi2 = 0.0;
        for k in 0..5 {
            let pk = if k < 4 {
                thermal_pmf(mu_eff, k as u32)
            } else {
                1.0 - (0..4).map(|j| thermal_pmf(mu_eff, j)).sum::<f64>()
            };
            let expected = pk * n as f64;
            chi2 += (hist[k] as f64 - expected).powi(2) / expected;
        }
        assert!(chi2 < chi2_crit(4.0), "chi2 = {chi2}");
    }

    #[test]
    fn unit_pass_fraction_is_identity() {
        let counts = vec![0, 1, 2, 3, 7];
        assert_eq!(apply_bandwidth_filter(&counts, 1.0, 0), counts);
    }

    #[test]
    fn ideal_detector_reproduces_inputs() {
        let arrivals: Vec<TimeTag> = (0..100)
            .map(|i| TimeTag {
                time: i as f64 * 1e-6,
                pulse: Some(i),
            })
            .collect();
        let d = DetectorParams {
            efficiency: 1.0,
            jitter_sigma: 0.0,
            dark_rate: 0.0,
            dead_time: 0.0,
        };
        let s = detect_stream(&arrivals, &d, 1e-3, 1.0, 0, 1);
        assert_eq!(s.tags, arrivals);
    }

    #[test]
    fn efficiency_thins_binomially() {
        let n = 1_000_000;
        let arrivals: Vec<TimeTag> = (0..n)
            .map(|i| TimeTag {
                time: i as f64 * 1e-7,
                pulse: Some(i),
            })
            .collect();
        let d = DetectorParams {
            efficiency: 0.6,
            jitter_sigma: 0.0,
            dark_rate: 0.0,
            dead_time: 0.0,
        };
        let s = detect_stream(&arrivals, &d, 0.2, 1.0, 0, 5);
        let frac = s.len() as f64 / n as f64;
        let sigma = (0.6 * 0.4 / n as f64).sqrt();
        assert!((frac - 0.6).abs() < 3.0 * sigma, "retained {frac}");
    }

    #[test]
    fn jitter_fwhm_is_recovered() {
        let n = 200_000;
        let arrivals: Vec<TimeTag> = (0..n)
            .map(|i| TimeTag {
                time: i as f64 * 1e-6,
                pulse: Some(i),
            })
            .collect();
        let d = DetectorParams::from_fwhm(1.0, 600e-12, 0.0, 0.0);
        let s = detect_stream(&arrivals, &d, 0.2, 1.0, 0, 9);
        let devs: Vec<f64> = s
            .tags
            .iter()
            .zip(arrivals.iter())
            .map(|(t, a)| t.time - a.time)
            .collect();
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / devs.len() as f64;
        let fwhm = FWHM_TO_SIGMA * var.sqrt();
        assert!(
            (fwhm - 600e-12).abs() / 600e-12 < 0.05,
            "measured FWHM {fwhm}"
        );
    }

    #[test]
    fn tags_are_ordered_and_respect_dead_time() {
        let mut rng_times: Vec<TimeTag> = (0..5000)
            .map(|i| TimeTag {
                time: (i % 997) as f64 * 1e-8,
                pulse: Some(i),
            })
            .collect();
        rng_times.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
        let d = DetectorParams {
            efficiency: 0.9,
            jitter_sigma: 100e-12,
            dark_rate: 1e5,
            dead_time: 50e-9,
        };
        let s = detect_stream(&rng_times, &d, 1e-5, 1.0, 0, 3);
        for w in s.tags.windows(2) {
            assert!(w[1].time - w[0].time >= d.dead_time);
        }
    }

    #[test]
    fn determinism_bit_for_bit() {
        let arrivals: Vec<TimeTag> = (0..1000)
            .map(|i| TimeTag {
                time: i as f64 * 1e-7,
                pulse: Some(i),
            })
            .collect();
        let d = DetectorParams::si_apd();
        let a = detect_stream(&arrivals, &d, 1e-4, 1.0, 0, 77);
        let b = detect_stream(&arrivals, &d, 1e-4, 1.0, 0, 77);
        assert_eq!(a, b);
    }

    #[test]
    fn tdc_single_tag_in_zero_bin() {
        let s = TimeTagStream {
            channel: 0,
            tags: vec![TimeTag {
                time: 1.0,
                pulse: Some(0),
            }],
        };
        let h = tdc_histogram(&s, &[1.0], 80e-12, 10e-9);
        assert_eq!(h.total(), 1);
        let i = h.counts.iter().position(|&c| c == 1).unwrap();
        assert!(h.bin_center(i).abs() <= 80e-12);
    }

    #[test]
    fn tdc_empty_stream_is_empty_histogram() {
        let s = TimeTagStream {
            channel: 0,
            tags: vec![],
        };
        let h = tdc_histogram(&s, &[0.0, 1.0], 80e-12, 10e-9);
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn histogram_total_counts_every_pair_in_range() {
        let s = TimeTagStream {
            channel: 0,
            tags: (0..100)
                .map(|i| TimeTag {
                    time: i as f64 * 1e-6,
                    pulse: Some(i),
                })
                .collect(),
        };
        let refs: Vec<f64> = (0..100).map(|i| i as f64 * 1e-6).collect();
        // range smaller than the tag spacing: only the diagonal pairs land
        let h = tdc_histogram(&s, &refs, 80e-12, 100e-9);
        assert_eq!(h.total(), 100);
    }

    #[test]
    fn identical_streams_all_coincide() {
        let tags: Vec<TimeTag> = (0..500)
            .map(|i| TimeTag {
                time: i as f64 * 1e-6,
                pulse: Some(i),
            })
            .collect();
        let a = TimeTagStream {
            channel: 0,
            tags: tags.clone(),
        };
        let b = TimeTagStream { channel: 1, tags };
        let c = coincide(&a, &b, 1e-9, 0.0, 500);
        assert_eq!(c.n_si, 500);
        assert_eq!(c.n_si, c.n_s);
        assert_eq!(c.n_si, c.n_i);
    }

    #[test]
    fn accidental_rate_of_independent_streams() {
        // two independent Poisson streams: expected accidentals r_s r_i w T
        let duration = 10.0;
        let r = 10_000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut make = |channel: u32| {
            let n = sample_poisson(&mut rng, r * duration);
            let mut tags: Vec<TimeTag> = (0..n)
                .map(|_| TimeTag {
                    time: rng.gen::<f64>() * duration,
                    pulse: None,
                })
                .collect();
            tags.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
            TimeTagStream { channel, tags }
        };
        let a = make(0);
        let b = make(1);
        let w = 1e-6;
        let c = coincide(&a, &b, w, 0.0, 0);
        let expected = r * r * w * duration;
        let sigma = expected.sqrt();
        assert!(
            (c.n_si as f64 - expected).abs() < 4.0 * sigma,
            "accidentals {} vs {expected}",
            c.n_si
        );
        assert!(c.n_si <= c.n_s.min(c.n_i));
    }

    #[test]
    fn duty_cycle_fraction() {
        let d = DutyCycle::default();
        assert!((d.storage_fraction() - 700.0 / 1500.0).abs() < 1e-12);
        assert!((d.effective_rate(1.0) - 7.0 / 15.0).abs() < 1e-12);
    }
}
