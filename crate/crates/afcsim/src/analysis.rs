//! Estimators and reconstructions: visibility fits, fidelity from
//! visibilities, the g2 cross-correlation, and qubit state tomography.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::polarization::JonesVector;
use crate::source::CoincidenceSet;
use crate::{AfcError, Result};

/// Result of a cosine fit p(x) = m + A_c cos 2x + A_s sin 2x.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VisibilityFit {
    /// Fringe visibility sqrt(A_c^2 + A_s^2) / m, clamped to [0, 1].
    pub visibility: f64,
    pub visibility_error: f64,
    /// Phase offset of the fringe, atan2(A_s, A_c).
    pub phase_offset: f64,
    /// Mean level m.
    pub mean_level: f64,
    pub mean_level_error: f64,
    /// Root-mean-square fit residual.
    pub rms_residual: f64,
}

/// Weighted least-squares cosine fit, linear in the (1, cos 2x, sin 2x)
/// basis. `errors` are per-point standard deviations; non-positive entries
/// fall back to the smallest positive error (one-count floor).
pub fn fit_visibility(settings: &[f64], probabilities: &[f64], errors: &[f64]) -> Result<VisibilityFit> {
    let n = settings.len();
    if n < 4 {
        return Err(AfcError::TooFewSettings { need: 4, got: n });
    }
    assert_eq!(probabilities.len(), n);
    assert_eq!(errors.len(), n);

    let floor = errors
        .iter()
        .cloned()
        .filter(|&e| e > 0.0)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1.0 };

    // normal equations for the 3-parameter linear model
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for i in 0..n {
        let sigma = if errors[i] > 0.0 { errors[i] } else { floor };
        let w = 1.0 / (sigma * sigma);
        let row = [1.0, (2.0 * settings[i]).cos(), (2.0 * settings[i]).sin()];
        for a in 0..3 {
            for b in 0..3 {
                ata[a][b] += w * row[a] * row[b];
            }
            atb[a] += w * row[a] * probabilities[i];
        }
    }
    let cov = invert3(&ata).ok_or(AfcError::DegenerateFit)?;
    let mut params = [0.0f64; 3];
    for a in 0..3 {
        for b in 0..3 {
            params[a] += cov[a][b] * atb[b];
        }
    }
    let (m, ac, as_) = (params[0], params[1], params[2]);
    if m.abs() < 1e-300 {
        return Err(AfcError::DegenerateFit);
    }
    let amp = (ac * ac + as_ * as_).sqrt();
    let visibility = (amp / m).clamp(0.0, 1.0);

    // first-order error propagation through V = sqrt(ac^2 + as^2) / m
    let grad = if amp > 0.0 {
        [-amp / (m * m), ac / (amp * m), as_ / (amp * m)]
    } else {
        [0.0, 1.0 / m, 1.0 / m]
    };
    let mut var = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            var += grad[a] * cov[a][b] * grad[b];
        }
    }

    let mut ss = 0.0;
    for i in 0..n {
        let model = m + ac * (2.0 * settings[i]).cos() + as_ * (2.0 * settings[i]).sin();
        ss += (probabilities[i] - model).powi(2);
    }

    Ok(VisibilityFit {
        visibility,
        visibility_error: var.max(0.0).sqrt(),
        phase_offset: as_.atan2(ac),
        mean_level: m,
        mean_level_error: cov[0][0].max(0.0).sqrt(),
        rms_residual: (ss / n as f64).sqrt(),
    })
}

fn invert3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
            let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
            // cofactor transpose
            inv[j][i] = inv_det * (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]);
        }
    }
    Some(inv)
}

/// Average H/V fidelity from the two fitted visibilities:
/// F = (2 + V_H + V_V) / 4.
pub fn fidelity_from_visibilities(v_h: f64, v_v: f64) -> Result<f64> {
    for (name, v) in [("v_h", v_h), ("v_v", v_v)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(AfcError::InvalidRatio {
                name: if name == "v_h" { "v_h" } else { "v_v" },
                value: v,
                range: "[0, 1]",
            });
        }
    }
    Ok((2.0 + v_h + v_v) / 4.0)
}

/// g2 estimate with a Poisson-propagated standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct G2Estimate {
    pub g2: f64,
    pub std_error: f64,
}

/// Signal-idler cross-correlation g2 = P_si / (P_s P_i), computed from raw
/// counts as (N_si N_pulses) / (N_s N_i).
pub fn estimate_g2(counts: &CoincidenceSet) -> Result<G2Estimate> {
    if counts.n_s == 0 || counts.n_i == 0 {
        return Err(AfcError::ZeroCounts("singles"));
    }
    let g2 = (counts.n_si as f64 * counts.n_pulses as f64) / (counts.n_s as f64 * counts.n_i as f64);
    // independent-Poisson propagation; N_si dominates at low rates
    let rel = (if counts.n_si > 0 {
        1.0 / counts.n_si as f64
    } else {
        1.0
    }) + 1.0 / counts.n_s as f64
        + 1.0 / counts.n_i as f64;
    Ok(G2Estimate {
        g2,
        std_error: g2 * rel.sqrt(),
    })
}

/// 2x2 density matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    pub m: [[Complex64; 2]; 2],
}

/// Serialized form: separate real and imaginary 2x2 arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityMatrixJson {
    pub re: [[f64; 2]; 2],
    pub im: [[f64; 2]; 2],
}

impl DensityMatrix {
    pub fn from_pure(psi: &JonesVector) -> Self {
        let p = psi.normalized();
        let v = [p.h, p.v];
        let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = v[i] * v[j].conj();
            }
        }
        Self { m }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            m: [
                [Complex64::new(0.5, 0.0), Complex64::new(0.0, 0.0)],
                [Complex64::new(0.0, 0.0), Complex64::new(0.5, 0.0)],
            ],
        }
    }

    pub fn from_stokes(s1: f64, s2: f64, s3: f64) -> Self {
        Self {
            m: [
                [
                    Complex64::new(0.5 * (1.0 + s1), 0.0),
                    Complex64::new(0.5 * s2, -0.5 * s3),
                ],
                [
                    Complex64::new(0.5 * s2, 0.5 * s3),
                    Complex64::new(0.5 * (1.0 - s1), 0.0),
                ],
            ],
        }
    }

    /// Stokes parameters (sigma_z, sigma_x, sigma_y expectations).
    pub fn stokes(&self) -> (f64, f64, f64) {
        let s1 = (self.m[0][0] - self.m[1][1]).re;
        let s2 = (self.m[0][1] + self.m[1][0]).re;
        let s3 = (self.m[1][0] - self.m[0][1]).im;
        (s1, s2, s3)
    }

    pub fn trace(&self) -> Complex64 {
        self.m[0][0] + self.m[1][1]
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = (self.m[0][0].im).abs().max((self.m[1][1].im).abs());
        worst = worst.max((self.m[0][1] - self.m[1][0].conj()).norm());
        worst
    }

    /// Eigenvalues in descending order with orthonormal eigenvectors.
    pub fn eigensystem(&self) -> ([f64; 2], [JonesVector; 2]) {
        let a = self.m[0][0].re;
        let b = self.m[1][1].re;
        let c = self.m[0][1];
        let half_diff = 0.5 * (a - b);
        let r = (half_diff * half_diff + c.norm_sqr()).sqrt();
        let mean = 0.5 * (a + b);
        let l1 = mean + r;
        let l2 = mean - r;
        let v1 = if c.norm() > 1e-15 || half_diff.abs() > 1e-15 {
            let v = JonesVector {
                h: c,
                v: Complex64::new(l1 - a, 0.0),
            };
            if v.norm_sqr() > 1e-30 {
                v.normalized()
            } else {
                JonesVector::horizontal()
            }
        } else {
            JonesVector::horizontal()
        };
        let v2 = v1.orthogonal();
        ([l1, l2], [v1, v2])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigensystem().0[1]
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                s += (self.m[i][j] - other.m[i][j]).norm_sqr();
            }
        }
        s.sqrt()
    }

    pub fn to_json(&self) -> DensityMatrixJson {
        let mut re = [[0.0; 2]; 2];
        let mut im = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                re[i][j] = self.m[i][j].re;
                im[i][j] = self.m[i][j].im;
            }
        }
        DensityMatrixJson { re, im }
    }
}

/// Projection counts in the three mutually unbiased bases: (H, V),
/// (+45, -45), (right, left circular).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TomographyCounts {
    pub hv: (u64, u64),
    pub diag: (u64, u64),
    pub circ: (u64, u64),
}

/// Linear-inversion Stokes reconstruction: S_k = (N+ - N-)/(N+ + N-) per
/// basis, rho = (I + S1 sz + S2 sx + S3 sy)/2. The result may be unphysical
/// at finite counts; follow with [`mle_project`].
pub fn stokes_reconstruct(counts: &TomographyCounts) -> Result<((f64, f64, f64), DensityMatrix)> {
    let stokes_of = |(p, m): (u64, u64), what: &'static str| -> Result<f64> {
        let tot = p + m;
        if tot == 0 {
            return Err(AfcError::ZeroCounts(what));
        }
        Ok((p as f64 - m as f64) / tot as f64)
    };
    let s1 = stokes_of(counts.hv, "H/V basis")?;
    let s2 = stokes_of(counts.diag, "diagonal basis")?;
    let s3 = stokes_of(counts.circ, "circular basis")?;
    Ok(((s1, s2, s3), DensityMatrix::from_stokes(s1, s2, s3)))
}

/// Nearest (Frobenius) positive-semidefinite unit-trace matrix: negative
/// eigenvalues are zeroed and the remainder renormalized to unit trace.
pub fn mle_project(rho_lin: &DensityMatrix) -> DensityMatrix {
    let ([_, l2], [v1, _]) = rho_lin.eigensystem();
    if l2 >= 0.0 {
        // already physical (given unit trace on input)
        return *rho_lin;
    }
    // with unit trace and l2 < 0 the closest physical state is the pure
    // state along the dominant eigenvector
    DensityMatrix::from_pure(&v1)
}

/// Fidelity of a state with a pure target: F = <psi| rho |psi>.
pub fn state_fidelity(rho: &DensityMatrix, target: &JonesVector) -> f64 {
    let p = target.normalized();
    let v = [p.h, p.v];
    let mut f = Complex64::new(0.0, 0.0);
    for i in 0..2 {
        for j in 0..2 {
            f += v[i].conj() * rho.m[i][j] * v[j];
        }
    }
    f.re
}
