//! Single-port reflection traces and resonance fitting.
//!
//! The reflection of a single-port resonator probed at angular frequency
//! ω = 2πf is modeled as
//!
//! ```text
//! S11(ω) = C·exp(i(φ0 + ω·t_ed)) · (2i(ω−ω0) − ω0/Q_ext + ω0/Q_int)
//!                                   ─────────────────────────────────
//!                                   (2i(ω−ω0) + ω0/Q_ext + ω0/Q_int)
//! ```
//!
//! with baseline magnitude C, phase offset φ0, electrical delay t_ed, and
//! internal/external quality factors. Fitting minimizes the squared distance
//! between model and data over the stacked real/imaginary parts with a damped
//! Gauss–Newton search and an analytic Jacobian.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constants::HBAR;
use crate::optim::{self, LeastSquaresProblem, LmConfig};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Frequency-indexed complex reflection samples with measurement metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReflectionTrace {
    /// Probe frequencies (Hz), strictly increasing.
    pub frequencies: Vec<f64>,
    /// Complex reflection at each probe frequency (dimensionless).
    pub s11: Vec<Complex64>,
    /// Power at the device plane (W).
    pub applied_power: f64,
    /// Stage temperature (K).
    pub temperature: f64,
}

impl ReflectionTrace {
    /// Validates the trace invariants: ≥ 16 strictly increasing frequencies,
    /// matching sample count, positive power and temperature.
    pub fn new(
        frequencies: Vec<f64>,
        s11: Vec<Complex64>,
        applied_power: f64,
        temperature: f64,
    ) -> Result<Self, FitError> {
        if frequencies.len() < 16 {
            return Err(FitError::InvalidInput(format!(
                "trace has {} points; at least 16 required",
                frequencies.len()
            )));
        }
        if s11.len() != frequencies.len() {
            return Err(FitError::InvalidInput(format!(
                "{} s11 samples for {} frequencies",
                s11.len(),
                frequencies.len()
            )));
        }
        if !frequencies.windows(2).all(|w| w[0] < w[1]) {
            return Err(FitError::InvalidInput(
                "frequencies must be strictly increasing".into(),
            ));
        }
        if frequencies[0] <= 0.0 {
            return Err(FitError::InvalidInput("frequencies must be positive".into()));
        }
        if applied_power <= 0.0 || temperature <= 0.0 {
            return Err(FitError::InvalidInput(
                "applied power and temperature must be positive".into(),
            ));
        }
        Ok(ReflectionTrace {
            frequencies,
            s11,
            applied_power,
            temperature,
        })
    }
}

/// Fitted parameters of the single-port reflection model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceFit {
    /// Resonance frequency (Hz).
    pub f0: f64,
    /// Internal quality factor.
    pub q_int: f64,
    /// External quality factor.
    pub q_ext: f64,
    /// Magnitude of the reflection baseline.
    pub baseline_mag: f64,
    /// Phase offset φ0 (rad).
    pub phase_offset: f64,
    /// Electrical delay (s).
    pub electrical_delay: f64,
    /// 6×6 covariance over (f0, q_int, q_ext, baseline_mag, phase_offset,
    /// electrical_delay), row-major.
    pub covariance: Vec<f64>,
    /// RMS of the stacked real/imaginary residuals (dimensionless).
    pub residual_rms: f64,
}

impl ResonanceFit {
    /// Parameter set without covariance, for model evaluation and synthesis.
    pub fn from_params(
        f0: f64,
        q_int: f64,
        q_ext: f64,
        baseline_mag: f64,
        phase_offset: f64,
        electrical_delay: f64,
    ) -> Self {
        ResonanceFit {
            f0,
            q_int,
            q_ext,
            baseline_mag,
            phase_offset,
            electrical_delay,
            covariance: vec![0.0; 36],
            residual_rms: 0.0,
        }
    }

    /// Loaded quality factor, 1/Q_l = 1/Q_int + 1/Q_ext.
    pub fn q_loaded(&self) -> f64 {
        1.0 / (1.0 / self.q_int + 1.0 / self.q_ext)
    }

    /// 1σ uncertainties (square roots of the covariance diagonal) in
    /// parameter order.
    pub fn sigmas(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.covariance[i * 6 + i].max(0.0).sqrt();
        }
        out
    }

    fn check_finite(&self) -> Result<(), FitError> {
        let values = [
            self.f0,
            self.q_int,
            self.q_ext,
            self.baseline_mag,
            self.phase_offset,
            self.electrical_delay,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidParameter(
                "non-finite resonance parameter".into(),
            ));
        }
        if self.f0 <= 0.0 || self.q_int <= 0.0 || self.q_ext <= 0.0 || self.baseline_mag <= 0.0 {
            return Err(FitError::InvalidParameter(
                "f0, Q_int, Q_ext and baseline magnitude must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean intracavity photon number and the loaded quality factor it was
/// computed with.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhotonEstimate {
    pub n_mean: f64,
    pub q_loaded: f64,
}

/// Errors from trace construction and resonance fitting.
#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(
        "no resonance feature detected: dip prominence {prominence:.3e} is below 3x the noise floor {noise_floor:.3e}"
    )]
    NoResonance { prominence: f64, noise_floor: f64 },
    #[error("trace spans {spanned:.2} estimated linewidths around the dip; at least 3 required")]
    InsufficientSpan { spanned: f64 },
    #[error("fit did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best: Box<ResonanceFit>,
    },
}

/// Evaluate the reflection model at a probe frequency (Hz).
pub fn model_s11(params: &ResonanceFit, freq: f64) -> Result<Complex64, FitError> {
    params.check_finite()?;
    if !(freq > 0.0) {
        return Err(FitError::InvalidInput(format!(
            "probe frequency must be positive, got {freq}"
        )));
    }
    Ok(eval_model(
        &[
            params.f0,
            params.q_int,
            params.q_ext,
            params.baseline_mag,
            params.phase_offset,
            params.electrical_delay,
        ],
        freq,
    ))
}

/// Unchecked model evaluation on a raw parameter slice
/// (f0, q_int, q_ext, C, φ0, t_ed).
fn eval_model(p: &[f64], freq: f64) -> Complex64 {
    eval_model_ref(p, freq, 0.0)
}

/// Model evaluation with the delay phase referenced to `omega_ref`:
/// baseline = C·exp(i(p[4] + (ω − ω_ref)·t_ed)). The fit uses the trace
/// center as the reference so phase offset and delay stay well conditioned;
/// `omega_ref = 0` recovers the plain model.
fn eval_model_ref(p: &[f64], freq: f64, omega_ref: f64) -> Complex64 {
    let omega = TWO_PI * freq;
    let omega0 = TWO_PI * p[0];
    let kappa_int = omega0 / p[1];
    let kappa_ext = omega0 / p[2];
    let detuning = Complex64::new(0.0, 2.0 * (omega - omega0));
    let numer = detuning + (kappa_int - kappa_ext);
    let denom = detuning + (kappa_int + kappa_ext);
    let baseline = Complex64::from_polar(p[3], p[4] + (omega - omega_ref) * p[5]);
    baseline * numer / denom
}

/// Analytic derivatives of the referenced model with respect to all six
/// parameters.
fn eval_jacobian_ref(p: &[f64], freq: f64, omega_ref: f64) -> [Complex64; 6] {
    let omega = TWO_PI * freq;
    let omega0 = TWO_PI * p[0];
    let q_int = p[1];
    let q_ext = p[2];
    let kappa_int = omega0 / q_int;
    let kappa_ext = omega0 / q_ext;
    let detuning = Complex64::new(0.0, 2.0 * (omega - omega0));
    let numer = detuning + (kappa_int - kappa_ext);
    let denom = detuning + (kappa_int + kappa_ext);
    let baseline = Complex64::from_polar(p[3], p[4] + (omega - omega_ref) * p[5]);
    let s = baseline * numer / denom;
    let denom2 = denom * denom;

    // d/dω0 with the quotient rule; dN/dω0 = −2i + 1/Q_int − 1/Q_ext.
    let dn_domega0 = Complex64::new(1.0 / q_int - 1.0 / q_ext, -2.0);
    let dd_domega0 = Complex64::new(1.0 / q_int + 1.0 / q_ext, -2.0);
    let ds_domega0 = baseline * (dn_domega0 * denom - numer * dd_domega0) / denom2;

    // κ_int enters N and D with +1; κ_ext with −1 in N and +1 in D.
    let ds_dkint = baseline * (denom - numer) / denom2;
    let ds_dkext = baseline * (-denom - numer) / denom2;

    [
        ds_domega0 * TWO_PI,
        ds_dkint * (-omega0 / (q_int * q_int)),
        ds_dkext * (-omega0 / (q_ext * q_ext)),
        s / p[3],
        Complex64::i() * s,
        Complex64::i() * (omega - omega_ref) * s,
    ]
}

#[cfg(test)]
fn eval_jacobian(p: &[f64], freq: f64) -> [Complex64; 6] {
    eval_jacobian_ref(p, freq, 0.0)
}

/// Synthesize a reflection trace from model parameters plus complex Gaussian
/// noise of standard deviation `noise_sigma` per quadrature. Deterministic
/// for a fixed seed. Metadata defaults to 1 fW at 20 mK; adjust the returned
/// struct if other values are needed.
pub fn synthesize_trace(
    params: &ResonanceFit,
    grid: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<ReflectionTrace, FitError> {
    params.check_finite()?;
    if grid.is_empty() {
        return Err(FitError::InvalidInput("empty frequency grid".into()));
    }
    if noise_sigma < 0.0 {
        return Err(FitError::InvalidInput("noise sigma must be >= 0".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let raw = [
        params.f0,
        params.q_int,
        params.q_ext,
        params.baseline_mag,
        params.phase_offset,
        params.electrical_delay,
    ];
    let s11 = grid
        .iter()
        .map(|&f| {
            let clean = eval_model(&raw, f);
            if noise_sigma == 0.0 {
                clean
            } else {
                clean
                    + Complex64::new(
                        noise_sigma * normal.sample(&mut rng),
                        noise_sigma * normal.sample(&mut rng),
                    )
            }
        })
        .collect();
    ReflectionTrace::new(grid.to_vec(), s11, 1e-15, 0.020)
}

struct ReflectionProblem<'a> {
    trace: &'a ReflectionTrace,
    omega_ref: f64,
}

impl LeastSquaresProblem for ReflectionProblem<'_> {
    fn residuals(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
        if p[0] <= 0.0 || p[1] <= 0.0 || p[2] <= 0.0 || p[3] <= 0.0 {
            return None;
        }
        let n = self.trace.frequencies.len();
        let raw = [p[0], p[1], p[2], p[3], p[4], p[5]];
        let mut r = DVector::zeros(2 * n);
        for (k, (&f, &data)) in self
            .trace
            .frequencies
            .iter()
            .zip(&self.trace.s11)
            .enumerate()
        {
            let diff = eval_model_ref(&raw, f, self.omega_ref) - data;
            r[k] = diff.re;
            r[n + k] = diff.im;
        }
        Some(r)
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>> {
        if p[0] <= 0.0 || p[1] <= 0.0 || p[2] <= 0.0 || p[3] <= 0.0 {
            return None;
        }
        let n = self.trace.frequencies.len();
        let raw = [p[0], p[1], p[2], p[3], p[4], p[5]];
        let mut jac = DMatrix::zeros(2 * n, 6);
        for (k, &f) in self.trace.frequencies.iter().enumerate() {
            let grad = eval_jacobian_ref(&raw, f, self.omega_ref);
            for (j, g) in grad.iter().enumerate() {
                jac[(k, j)] = g.re;
                jac[(n + k, j)] = g.im;
            }
        }
        Some(jac)
    }
}

/// Fit the reflection model to a trace. When `initial` is `None` the starting
/// point is generated from the trace itself: baseline magnitude from the
/// trace edges, electrical delay from the edge phase slopes, f0 from the
/// magnitude minimum, loaded Q from the half-depth width and the coupling
/// split from the dip depth with the phase-winding direction.
pub fn fit_resonance(
    trace: &ReflectionTrace,
    initial: Option<&ResonanceFit>,
) -> Result<ResonanceFit, FitError> {
    fit_resonance_with(trace, initial, &LmConfig::default())
}

/// [`fit_resonance`] with explicit optimizer tolerances (the configuration
/// file exposes them).
pub fn fit_resonance_with(
    trace: &ReflectionTrace,
    initial: Option<&ResonanceFit>,
    config: &LmConfig,
) -> Result<ResonanceFit, FitError> {
    let n = trace.frequencies.len();
    let omega_ref = TWO_PI * 0.5 * (trace.frequencies[0] + trace.frequencies[n - 1]);
    let guess = initial_guess(trace, omega_ref)?;
    // Internally the baseline phase is referenced to the trace center
    // (p[4] = φ0 + ω_ref·t_ed) so the delay direction stays well conditioned.
    let start = match initial {
        Some(fit) => {
            fit.check_finite()?;
            [
                fit.f0,
                fit.q_int,
                fit.q_ext,
                fit.baseline_mag,
                fit.phase_offset + omega_ref * fit.electrical_delay,
                fit.electrical_delay,
            ]
        }
        None => guess,
    };

    let problem = ReflectionProblem { trace, omega_ref };
    let lm = optim::levenberg_marquardt(&problem, &DVector::from_row_slice(&start), config)
        .map_err(|e| FitError::InvalidInput(e.to_string()))?;

    // Map back to the ω = 0 phase reference, covariance included.
    let mut transform = DMatrix::identity(6, 6);
    transform[(4, 5)] = -omega_ref;
    let covariance = &transform * &lm.covariance * transform.transpose();

    let mut fit = ResonanceFit {
        f0: lm.params[0],
        q_int: lm.params[1],
        q_ext: lm.params[2],
        baseline_mag: lm.params[3],
        phase_offset: wrap_angle(lm.params[4] - omega_ref * lm.params[5]),
        electrical_delay: lm.params[5],
        covariance: symmetrized(&covariance),
        residual_rms: lm.residual_rms,
    };
    // Fold a negative baseline ambiguity into the phase.
    if fit.baseline_mag < 0.0 {
        fit.baseline_mag = -fit.baseline_mag;
        fit.phase_offset = wrap_angle(fit.phase_offset + std::f64::consts::PI);
    }
    if !lm.converged {
        return Err(FitError::NotConverged {
            iterations: lm.iterations,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Mean intracavity photon number for a single-port reflection measurement,
/// n = 4·P·Q_l² / (ħ·ω0²·Q_ext).
///
/// The paper-style power sweep plots Q_int against this quantity. The
/// steady-state reflection-mode formula used here is a documented convention
/// (no per-frequency calibration is applied); absolute photon numbers shift
/// accordingly if a different convention is assumed.
pub fn photon_number(fit: &ResonanceFit, applied_power: f64) -> Result<PhotonEstimate, FitError> {
    fit.check_finite()?;
    if applied_power < 0.0 {
        return Err(FitError::InvalidInput(
            "applied power must be non-negative".into(),
        ));
    }
    let q_loaded = fit.q_loaded();
    let omega0 = TWO_PI * fit.f0;
    let n_mean = 4.0 * applied_power * q_loaded * q_loaded / (HBAR * omega0 * omega0 * fit.q_ext);
    Ok(PhotonEstimate { n_mean, q_loaded })
}

/// Total unwrapped phase change of the baseline-corrected trace, in radians.
/// Overcoupled resonances (Q_ext < Q_int) wind by −2π, undercoupled ones by 0.
pub fn phase_winding(trace: &ReflectionTrace, fit: &ResonanceFit) -> f64 {
    let mut previous = None;
    let mut total = 0.0;
    for (&f, &s) in trace.frequencies.iter().zip(&trace.s11) {
        let baseline =
            Complex64::from_polar(fit.baseline_mag, fit.phase_offset + TWO_PI * f * fit.electrical_delay);
        let phase = (s / baseline).arg();
        if let Some(prev) = previous {
            let mut d: f64 = phase - prev;
            while d > std::f64::consts::PI {
                d -= TWO_PI;
            }
            while d < -std::f64::consts::PI {
                d += TWO_PI;
            }
            total += d;
        }
        previous = Some(phase);
    }
    total
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TWO_PI;
    if a > std::f64::consts::PI {
        a -= TWO_PI;
    } else if a <= -std::f64::consts::PI {
        a += TWO_PI;
    }
    a
}

fn symmetrized(cov: &DMatrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; 36];
    for i in 0..6 {
        for j in 0..6 {
            out[i * 6 + j] = 0.5 * (cov[(i, j)] + cov[(j, i)]);
        }
    }
    out
}

/// Auto-generated starting point (with the phase referenced to `omega_ref`);
/// also performs the resonance-detection and span preconditions.
fn initial_guess(trace: &ReflectionTrace, omega_ref: f64) -> Result<[f64; 6], FitError> {
    let n = trace.frequencies.len();
    let edge = (n / 10).max(3).min(n / 2);

    // Baseline magnitude from the trace edges.
    let edge_indices: Vec<usize> = (0..edge).chain(n - edge..n).collect();
    let baseline_mag = edge_indices
        .iter()
        .map(|&k| trace.s11[k].norm())
        .sum::<f64>()
        / edge_indices.len() as f64;
    if baseline_mag <= 0.0 {
        return Err(FitError::InvalidInput("trace magnitude is zero".into()));
    }

    // Noise floor per quadrature from successive differences at the edges.
    let mut diff_sq = 0.0;
    let mut diff_count = 0usize;
    for w in [(0, edge), (n - edge, n)] {
        for k in w.0 + 1..w.1 {
            diff_sq += (trace.s11[k] - trace.s11[k - 1]).norm_sqr();
            diff_count += 1;
        }
    }
    let noise_floor = if diff_count > 0 {
        (diff_sq / diff_count as f64).sqrt() / 2.0
    } else {
        0.0
    };

    // Dip position and prominence on the baseline-normalized magnitude.
    let mags: Vec<f64> = trace.s11.iter().map(|s| s.norm()).collect();
    let (min_idx, &min_mag) = mags
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty trace");
    let prominence = baseline_mag - min_mag;
    if prominence <= 3.0 * noise_floor + 1e-9 * baseline_mag {
        return Err(FitError::NoResonance {
            prominence,
            noise_floor,
        });
    }

    // Electrical delay from the unwrapped phase slope at each edge.
    let mut slopes = Vec::new();
    for w in [(0, edge), (n - edge, n)] {
        if let Some(s) = phase_slope(&trace.frequencies[w.0..w.1], &trace.s11[w.0..w.1]) {
            slopes.push(s);
        }
    }
    // phase_slope fits against angular frequency, so the slope is t_ed.
    let electrical_delay = slopes.iter().sum::<f64>() / slopes.len().max(1) as f64;

    // Center-referenced phase from a delay-corrected complex average of the
    // edge samples (the resonance factor is ≈ 1 there).
    let phase_ref = edge_indices
        .iter()
        .map(|&k| {
            let phase = (TWO_PI * trace.frequencies[k] - omega_ref) * electrical_delay;
            trace.s11[k] * Complex64::from_polar(1.0, -phase)
        })
        .sum::<Complex64>()
        .arg();

    let f0 = refine_minimum(&trace.frequencies, &mags, min_idx);

    // Half-depth width in |S11|²; for this model the crossings sit exactly
    // one loaded linewidth apart.
    let level = ((baseline_mag * baseline_mag + min_mag * min_mag) / 2.0).sqrt();
    let fwhm = width_at_level(&trace.frequencies, &mags, min_idx, level)
        .unwrap_or((trace.frequencies[n - 1] - trace.frequencies[0]) / 4.0);
    let q_loaded = (f0 / fwhm).max(1.0);

    let span = trace.frequencies[n - 1] - trace.frequencies[0];
    let spanned = span / (f0 / q_loaded);
    if spanned < 3.0 {
        return Err(FitError::InsufficientSpan { spanned });
    }

    // Coupling split from the dip depth; the phase winding direction picks
    // the over/undercoupled branch.
    let depth = (min_mag / baseline_mag).clamp(0.0, 0.999_999);
    let provisional = ResonanceFit::from_params(
        f0,
        1.0,
        1.0,
        baseline_mag,
        wrap_angle(phase_ref - omega_ref * electrical_delay),
        electrical_delay,
    );
    let winding = phase_winding(trace, &provisional);
    let ratio = if winding.abs() > std::f64::consts::PI {
        -depth
    } else {
        depth
    };
    let q_int = 2.0 * q_loaded / (1.0 + ratio);
    let q_ext = 2.0 * q_loaded / (1.0 - ratio);

    Ok([f0, q_int, q_ext, baseline_mag, phase_ref, electrical_delay])
}

/// Least-squares slope of the unwrapped phase against angular frequency.
fn phase_slope(freqs: &[f64], s11: &[Complex64]) -> Option<f64> {
    if freqs.len() < 2 {
        return None;
    }
    let mut phases = Vec::with_capacity(freqs.len());
    let mut prev = s11[0].arg();
    phases.push(prev);
    for s in &s11[1..] {
        let mut p = s.arg();
        while p - prev > std::f64::consts::PI {
            p -= TWO_PI;
        }
        while p - prev < -std::f64::consts::PI {
            p += TWO_PI;
        }
        phases.push(p);
        prev = p;
    }
    let omegas: Vec<f64> = freqs.iter().map(|&f| TWO_PI * f).collect();
    let mean_w = omegas.iter().sum::<f64>() / omegas.len() as f64;
    let mean_p = phases.iter().sum::<f64>() / phases.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, p) in omegas.iter().zip(&phases) {
        num += (w - mean_w) * (p - mean_p);
        den += (w - mean_w) * (w - mean_w);
    }
    (den > 0.0).then(|| num / den)
}

/// Parabolic refinement of a grid minimum.
fn refine_minimum(freqs: &[f64], mags: &[f64], idx: usize) -> f64 {
    if idx == 0 || idx + 1 >= freqs.len() {
        return freqs[idx];
    }
    let (y0, y1, y2) = (mags[idx - 1], mags[idx], mags[idx + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    if denom <= 0.0 {
        return freqs[idx];
    }
    let shift = 0.5 * (y0 - y2) / denom;
    let h = 0.5 * (freqs[idx + 1] - freqs[idx - 1]);
    freqs[idx] + shift.clamp(-1.0, 1.0) * h
}

/// Distance between the first level-crossings on each side of the dip.
fn width_at_level(freqs: &[f64], mags: &[f64], min_idx: usize, level: f64) -> Option<f64> {
    let mut left = None;
    for k in (1..=min_idx).rev() {
        if mags[k - 1] >= level && mags[k] < level {
            let t = (level - mags[k]) / (mags[k - 1] - mags[k]);
            left = Some(freqs[k] + t * (freqs[k - 1] - freqs[k]));
            break;
        }
    }
    let mut right = None;
    for k in min_idx..freqs.len() - 1 {
        if mags[k] < level && mags[k + 1] >= level {
            let t = (level - mags[k]) / (mags[k + 1] - mags[k]);
            right = Some(freqs[k] + t * (freqs[k + 1] - freqs[k]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) if r > l => Some(r - l),
        _ => None,
    }
}

/// Evenly spaced frequency grid spanning ±`halfwidths` loaded linewidths
/// around f0.
pub fn linewidth_grid(f0: f64, q_loaded: f64, halfwidths: f64, points: usize) -> Vec<f64> {
    let half_span = halfwidths * f0 / q_loaded;
    (0..points)
        .map(|k| f0 - half_span + 2.0 * half_span * k as f64 / (points - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn figure_params() -> ResonanceFit {
        // Room-temperature cavity mode parameters.
        ResonanceFit::from_params(7.687e9, 4700.0, 7100.0, 1.0, 0.0, 0.0)
    }

    #[test]
    fn critical_coupling_null_at_resonance() {
        let p = ResonanceFit::from_params(5e9, 1e5, 1e5, 0.8, 0.3, 1e-9);
        let s = model_s11(&p, 5e9).unwrap();
        assert!(s.norm() < 1e-14);
    }

    #[test]
    fn baseline_recovered_far_from_resonance() {
        let p = ResonanceFit::from_params(5e9, 5e4, 2e5, 0.8, 0.3, 0.0);
        for f in [1e9, 9e9, 4.9e9, 5.1e9] {
            let s = model_s11(&p, f).unwrap();
            assert_relative_eq!(s.norm(), 0.8, max_relative = 2e-4);
        }
    }

    #[test]
    fn dip_depth_matches_coupling_formula() {
        let p = figure_params();
        // Exactly at resonance the depth is |Q_ext − Q_int|/(Q_ext + Q_int).
        let at_res = model_s11(&p, p.f0).unwrap().norm();
        let expected = (7100.0_f64 - 4700.0).abs() / (7100.0 + 4700.0);
        assert_relative_eq!(at_res, expected, max_relative = 1e-12);
        assert_relative_eq!(at_res, 0.2034, epsilon = 5e-5);

        // Brute-force minimum over a ±5 linewidth grid containing f0.
        let grid = linewidth_grid(p.f0, p.q_loaded(), 5.0, 201);
        let min = grid
            .iter()
            .map(|&f| model_s11(&p, f).unwrap().norm())
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(min, expected, max_relative = 1e-9);
    }

    #[test]
    fn non_finite_parameter_is_rejected() {
        let mut p = figure_params();
        p.q_ext = f64::NAN;
        assert!(matches!(
            model_s11(&p, 5e9),
            Err(FitError::InvalidParameter(_))
        ));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let f0 = rng.random_range(1e9..10e9);
            let q_int = 10f64.powf(rng.random_range(3.0..7.0));
            let q_ext = 10f64.powf(rng.random_range(3.0..7.0));
            let c = rng.random_range(0.5..2.0);
            let phi = rng.random_range(-3.0..3.0);
            let t_ed = rng.random_range(-2e-9..2e-9);
            let q_l = 1.0 / (1.0 / q_int + 1.0 / q_ext);
            let freq = f0 * (1.0 + rng.random_range(-3.0..3.0) / q_l);

            let p = [f0, q_int, q_ext, c, phi, t_ed];
            let analytic = eval_jacobian(&p, freq);
            let max_mag = analytic.iter().map(|g| g.norm()).fold(0.0_f64, f64::max);
            // Central-difference steps sized to the model's scales: the f0
            // step must resolve the linewidth, the delay step corresponds to
            // a small phase change.
            let steps = [
                1e-4 * f0 / q_l,
                1e-5 * q_int,
                1e-5 * q_ext,
                1e-3 * c,
                1e-4,
                1e-4 / (TWO_PI * freq),
            ];
            for (j, &h) in steps.iter().enumerate() {
                let mut plus = p;
                let mut minus = p;
                plus[j] += h;
                minus[j] -= h;
                let numeric = (eval_model(&plus, freq) - eval_model(&minus, freq)) / (2.0 * h);
                let err = (analytic[j] - numeric).norm();
                assert!(
                    err <= 1e-6 * analytic[j].norm().max(1e-9 * max_mag),
                    "param {j}: analytic {:?} numeric {:?}",
                    analytic[j],
                    numeric
                );
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic_and_unbiased() {
        let p = figure_params();
        let grid = linewidth_grid(p.f0, p.q_loaded(), 5.0, 256);
        let a = synthesize_trace(&p, &grid, 0.01, 42).unwrap();
        let b = synthesize_trace(&p, &grid, 0.01, 42).unwrap();
        assert_eq!(a.s11, b.s11);

        let clean = synthesize_trace(&p, &grid, 0.0, 1).unwrap();
        for (s, &f) in clean.s11.iter().zip(&clean.frequencies) {
            assert_eq!(*s, model_s11(&p, f).unwrap());
        }

        // Sample standard deviation of the real-part noise within 5% of σ.
        let grid_long = linewidth_grid(p.f0, p.q_loaded(), 5.0, 10_000);
        let noisy = synthesize_trace(&p, &grid_long, 0.01, 3).unwrap();
        let devs: Vec<f64> = noisy
            .s11
            .iter()
            .zip(&noisy.frequencies)
            .map(|(s, &f)| (s - model_s11(&p, f).unwrap()).re)
            .collect();
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let var = devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / (devs.len() - 1) as f64;
        assert_relative_eq!(var.sqrt(), 0.01, max_relative = 0.05);
    }

    #[test]
    fn noiseless_round_trip_recovers_parameters() {
        let truth = ResonanceFit::from_params(7.687e9, 4700.0, 7100.0, 0.9, 0.3, 1e-9);
        let grid = linewidth_grid(truth.f0, truth.q_loaded(), 5.0, 400);
        let trace = synthesize_trace(&truth, &grid, 0.0, 0).unwrap();
        let fit = fit_resonance(&trace, None).unwrap();
        assert_relative_eq!(fit.f0, truth.f0, max_relative = 1e-6);
        assert_relative_eq!(fit.q_int, truth.q_int, max_relative = 1e-6);
        assert_relative_eq!(fit.q_ext, truth.q_ext, max_relative = 1e-6);
        assert_relative_eq!(fit.baseline_mag, truth.baseline_mag, max_relative = 1e-6);
        assert_relative_eq!(fit.phase_offset, truth.phase_offset, max_relative = 1e-5);
        assert_relative_eq!(fit.electrical_delay, truth.electrical_delay, max_relative = 1e-5);
    }

    #[test]
    fn high_q_round_trip_with_noise() {
        // Device-like parameters: overcoupled, million-scale Q.
        let truth = ResonanceFit::from_params(5.470e9, 2.0e6, 0.5e6, 1.1, -0.7, 0.8e-9);
        let grid = linewidth_grid(truth.f0, truth.q_loaded(), 6.0, 300);
        let trace = synthesize_trace(&truth, &grid, 0.003, 11).unwrap();
        let fit = fit_resonance(&trace, None).unwrap();
        assert_relative_eq!(fit.q_int, truth.q_int, max_relative = 0.05);
        assert_relative_eq!(fit.q_ext, truth.q_ext, max_relative = 0.05);
    }

    #[test]
    fn flat_baseline_reports_no_resonance() {
        let freqs: Vec<f64> = (0..64).map(|k| 5e9 + k as f64 * 1e5).collect();
        let s11 = vec![Complex64::new(1.0, 0.0); 64];
        let trace = ReflectionTrace::new(freqs, s11, 1e-15, 0.02).unwrap();
        assert!(matches!(
            fit_resonance(&trace, None),
            Err(FitError::NoResonance { .. })
        ));
    }

    #[test]
    fn global_complex_scale_is_absorbed_into_baseline() {
        let truth = ResonanceFit::from_params(6.1e9, 8e5, 3e5, 1.0, 0.2, 0.4e-9);
        let grid = linewidth_grid(truth.f0, truth.q_loaded(), 5.0, 240);
        let trace = synthesize_trace(&truth, &grid, 0.0, 5).unwrap();
        let fit_ref = fit_resonance(&trace, None).unwrap();

        let scale = Complex64::from_polar(0.8, 0.4);
        let scaled = ReflectionTrace::new(
            trace.frequencies.clone(),
            trace.s11.iter().map(|s| s * scale).collect(),
            trace.applied_power,
            trace.temperature,
        )
        .unwrap();
        let fit_scaled = fit_resonance(&scaled, None).unwrap();

        assert_relative_eq!(fit_scaled.f0, fit_ref.f0, max_relative = 1e-8);
        assert_relative_eq!(fit_scaled.q_int, fit_ref.q_int, max_relative = 1e-6);
        assert_relative_eq!(fit_scaled.q_ext, fit_ref.q_ext, max_relative = 1e-6);
        assert_relative_eq!(
            fit_scaled.baseline_mag,
            fit_ref.baseline_mag * 0.8,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            wrap_angle(fit_scaled.phase_offset - fit_ref.phase_offset),
            0.4,
            max_relative = 1e-5
        );
    }

    #[test]
    fn phase_winding_distinguishes_coupling_regimes() {
        let over = ResonanceFit::from_params(5e9, 1e6, 2e5, 1.0, 0.1, 0.2e-9);
        let grid = linewidth_grid(over.f0, over.q_loaded(), 30.0, 2000);
        let trace = synthesize_trace(&over, &grid, 0.0, 0).unwrap();
        let w = phase_winding(&trace, &over);
        assert_relative_eq!(w.abs(), TWO_PI, max_relative = 0.05);

        let under = ResonanceFit::from_params(5e9, 2e5, 1e6, 1.0, 0.1, 0.2e-9);
        let trace = synthesize_trace(&under, &grid, 0.0, 0).unwrap();
        let w = phase_winding(&trace, &under);
        assert!(w.abs() < 0.5);
    }

    #[test]
    fn photon_number_basics() {
        let fit = ResonanceFit::from_params(5.470e9, 2.0e6, 20e6, 1.0, 0.0, 0.0);
        let zero = photon_number(&fit, 0.0).unwrap();
        assert_eq!(zero.n_mean, 0.0);

        let p1 = photon_number(&fit, 1e-18).unwrap();
        let p2 = photon_number(&fit, 2e-18).unwrap();
        assert_relative_eq!(p2.n_mean, 2.0 * p1.n_mean, max_relative = 1e-12);

        // Loaded-Q consistency.
        let recomposed = 1.0 / (1.0 / fit.q_int + 1.0 / fit.q_ext);
        assert_relative_eq!(p1.q_loaded, recomposed, max_relative = 1e-12);

        // Independent arithmetic: Q_l = 20/11 × 10⁶, ω0 = 2π·5.47 GHz,
        // n = 4·1e-18·Q_l²/(ħ·ω0²·2e7) = 5.3075…
        let q_l = 20.0e6 / 11.0;
        let omega0 = TWO_PI * 5.470e9;
        let by_hand = 4.0 * 1e-18 * q_l * q_l / (1.054571817e-34 * omega0 * omega0 * 20e6);
        assert_relative_eq!(p1.n_mean, by_hand, max_relative = 1e-12);
        assert_relative_eq!(by_hand, 5.3075, max_relative = 1e-4);
    }
}
