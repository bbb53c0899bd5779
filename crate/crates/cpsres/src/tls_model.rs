//! Two-level-system (TLS) loss model and the loss upper bounds derived
//! from it.
//!
//! The internal loss as a function of photon number n and temperature T is
//!
//! ```text
//! 1/Q_int(n, T) = F·tanδ_TLS / (1 + n/n_c)^β · tanh(ħω/(2·k_B·T)) + 1/Q_r
//! ```
//!
//! with the saturable TLS term in front and a power-independent residual
//! quality factor Q_r. Power sweeps (fixed T) fit all four parameters;
//! temperature sweeps at fixed low power absorb the saturation factor into a
//! single amplitude and reduce to a two-parameter linear fit.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::constants::{
    BOLTZMANN_KB, NB2O5_DENSITY_KG_M3, NB_ATOMIC_MASS, NB_DENSITY_KG_M3, NB_DOS_FERMI_PER_J_UM3,
    NB_GAP_ENERGY_J, NB_LONDON_DEPTH_M, O_ATOMIC_MASS, PLANCK_H,
};
use crate::optim::{self, LeastSquaresProblem, LmConfig};

/// Fitted parameters of the TLS loss model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TlsFitParams {
    /// Product F_TLS·tanδ_TLS (dimensionless).
    pub f_tls_tan_delta: f64,
    /// Critical photon number.
    pub n_c: f64,
    /// Phenomenological saturation exponent β.
    pub beta_pow: f64,
    /// Residual power-independent quality factor.
    pub q_r: f64,
}

impl TlsFitParams {
    pub fn validate(&self) -> Result<(), TlsError> {
        let ok = self.f_tls_tan_delta > 0.0
            && self.n_c > 0.0
            && self.beta_pow > 0.0
            && self.beta_pow <= 2.0
            && self.q_r > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TlsError::InvalidInput(format!("invalid TLS parameters {self:?}")))
        }
    }
}

/// Material constants entering the quasiparticle bound and the regrowth
/// stoichiometry. Defaults are literature values for Nb; reports must echo
/// them because the source is external to the measurement.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaterialConstants {
    /// Nb superconducting gap Δ (J).
    pub gap_energy: f64,
    /// Density of states at the Fermi surface D(E_F) (states per J per µm³).
    pub dos_fermi: f64,
    /// London penetration depth λ (m).
    pub london_depth: f64,
    /// Nb mass density (kg/m³).
    pub rho_nb: f64,
    /// Nb₂O₅ mass density (kg/m³).
    pub rho_nb2o5: f64,
    /// Nb atomic mass number.
    pub a_nb: f64,
    /// O atomic mass number.
    pub a_o: f64,
    /// Relative permittivity assigned to interface layers.
    pub eps_interface: f64,
}

impl Default for MaterialConstants {
    fn default() -> Self {
        MaterialConstants {
            gap_energy: NB_GAP_ENERGY_J,
            dos_fermi: NB_DOS_FERMI_PER_J_UM3,
            london_depth: NB_LONDON_DEPTH_M,
            rho_nb: NB_DENSITY_KG_M3,
            rho_nb2o5: NB2O5_DENSITY_KG_M3,
            a_nb: NB_ATOMIC_MASS,
            a_o: O_ATOMIC_MASS,
            eps_interface: 10.0,
        }
    }
}

impl MaterialConstants {
    pub fn validate(&self) -> Result<(), TlsError> {
        let ok = self.gap_energy > 0.0
            && self.dos_fermi > 0.0
            && self.london_depth > 0.0
            && self.rho_nb > 0.0
            && self.rho_nb2o5 > 0.0
            && self.a_nb > 0.0
            && self.a_o > 0.0
            && self.eps_interface >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(TlsError::InvalidInput("invalid material constants".into()))
        }
    }
}

/// One point of a power sweep: photon number, fitted Q_int and optionally its
/// 1σ uncertainty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerSweepPoint {
    pub n_photon: f64,
    pub q_int: f64,
    pub q_sigma: Option<f64>,
}

/// One point of a temperature sweep: stage temperature and intrinsic Q.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TemperatureSweepPoint {
    pub temperature_k: f64,
    pub q_intr: f64,
    pub q_sigma: Option<f64>,
}

/// Power-sweep fit result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TlsPowerFit {
    pub params: TlsFitParams,
    /// 4×4 covariance over (F·tanδ, n_c, β, Q_r), row-major.
    pub covariance: Vec<f64>,
    pub residual_rms: f64,
    /// Set when the saturation scale is unidentifiable from the data
    /// (for example a power-independent sweep).
    pub degenerate: bool,
}

impl TlsPowerFit {
    pub fn sigmas(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.covariance[i * 4 + i].max(0.0).sqrt();
        }
        out
    }
}

/// Temperature-sweep fit result: 1/Q = A·tanh(ħω/2k_BT) + 1/Q_r.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemperatureFit {
    /// Saturated TLS loss amplitude A (the power-saturation factor absorbed).
    pub saturated_tls_loss: f64,
    /// Residual quality factor 1/intercept; may come out negative on noisy
    /// data, which callers should surface rather than clamp.
    pub q_r: f64,
    /// 2×2 covariance over (A, 1/Q_r), row-major.
    pub covariance: Vec<f64>,
    pub residual_rms: f64,
}

impl TemperatureFit {
    /// 1σ of the amplitude A.
    pub fn sigma_amplitude(&self) -> f64 {
        self.covariance[0].max(0.0).sqrt()
    }

    /// 1σ of Q_r, propagated from the intercept.
    pub fn sigma_q_r(&self) -> f64 {
        self.covariance[3].max(0.0).sqrt() * self.q_r * self.q_r
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TlsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ill-posed fit: {0}")]
    IllPosed(String),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
}

/// tanh(ħω/(2·k_B·T)) with ω = 2π·f0; the thermal TLS population factor.
pub fn tanh_factor(f0: f64, temperature: f64) -> f64 {
    (PLANCK_H * f0 / (2.0 * BOLTZMANN_KB * temperature)).tanh()
}

/// Evaluate 1/Q_int(n, T) for the TLS model.
pub fn tls_inverse_q(
    params: &TlsFitParams,
    n: f64,
    temperature: f64,
    f0: f64,
) -> Result<f64, TlsError> {
    params.validate()?;
    if n < 0.0 || temperature <= 0.0 || f0 <= 0.0 {
        return Err(TlsError::InvalidInput(
            "require n >= 0, temperature > 0, f0 > 0".into(),
        ));
    }
    let saturation = (1.0 + n / params.n_c).powf(-params.beta_pow);
    Ok(params.f_tls_tan_delta * saturation * tanh_factor(f0, temperature) + 1.0 / params.q_r)
}

/// Analytic gradient of `tls_inverse_q` with respect to
/// (F·tanδ, n_c, β, Q_r) at fixed (n, T, f0).
pub fn tls_inverse_q_gradient(params: &TlsFitParams, n: f64, temperature: f64, f0: f64) -> [f64; 4] {
    let u = 1.0 + n / params.n_c;
    let saturation = u.powf(-params.beta_pow);
    let th = tanh_factor(f0, temperature);
    let d_f = saturation * th;
    let d_nc = params.f_tls_tan_delta
        * th
        * params.beta_pow
        * n
        * u.powf(-params.beta_pow - 1.0)
        / (params.n_c * params.n_c);
    let d_beta = -params.f_tls_tan_delta * th * u.ln() * saturation;
    let d_qr = -1.0 / (params.q_r * params.q_r);
    [d_f, d_nc, d_beta, d_qr]
}

/// β search window and start value for the power-sweep fit. The window is a
/// fixed convention; the data never pins β tightly.
pub const BETA_BOUNDS: (f64, f64) = (0.1, 2.0);
pub const BETA_INITIAL: f64 = 0.5;

/// Internal parameterization of the power-sweep fit: logs for the three
/// positive parameters, a logistic map for β within its bounds. Keeps every
/// trial point inside the model domain so the minimizer never needs explicit
/// constraints.
struct PowerSweepProblem {
    n: Vec<f64>,
    y: Vec<f64>,
    weights: Vec<f64>,
    tanh_factor: f64,
}

impl PowerSweepProblem {
    fn physical(&self, theta: &DVector<f64>) -> TlsFitParams {
        TlsFitParams {
            f_tls_tan_delta: theta[0].exp(),
            n_c: theta[1].exp(),
            beta_pow: beta_from_logit(theta[2]),
            q_r: theta[3].exp(),
        }
    }
}

fn beta_from_logit(u: f64) -> f64 {
    let (lo, hi) = BETA_BOUNDS;
    lo + (hi - lo) / (1.0 + (-u).exp())
}

fn beta_to_logit(beta: f64) -> f64 {
    let (lo, hi) = BETA_BOUNDS;
    let t = ((beta - lo) / (hi - beta)).max(1e-12);
    t.ln()
}

fn beta_logit_derivative(u: f64) -> f64 {
    let (lo, hi) = BETA_BOUNDS;
    let s = 1.0 / (1.0 + (-u).exp());
    (hi - lo) * s * (1.0 - s)
}

impl LeastSquaresProblem for PowerSweepProblem {
    fn residuals(&self, theta: &DVector<f64>) -> Option<DVector<f64>> {
        if theta.iter().any(|v| !v.is_finite() || v.abs() > 700.0) {
            return None;
        }
        let p = self.physical(theta);
        Some(DVector::from_iterator(
            self.n.len(),
            self.n.iter().zip(&self.y).zip(&self.weights).map(|((&n, &y), &w)| {
                let model = p.f_tls_tan_delta * (1.0 + n / p.n_c).powf(-p.beta_pow) * self.tanh_factor
                    + 1.0 / p.q_r;
                w * (model - y)
            }),
        ))
    }

    fn jacobian(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        if theta.iter().any(|v| !v.is_finite() || v.abs() > 700.0) {
            return None;
        }
        let p = self.physical(theta);
        let scale = [
            p.f_tls_tan_delta,
            p.n_c,
            beta_logit_derivative(theta[2]),
            p.q_r,
        ];
        let mut jac = DMatrix::zeros(self.n.len(), 4);
        for (i, (&n, &w)) in self.n.iter().zip(&self.weights).enumerate() {
            // Temperature argument is fixed for a power sweep; reuse the
            // precomputed tanh factor through a synthetic gradient call.
            let u = 1.0 + n / p.n_c;
            let saturation = u.powf(-p.beta_pow);
            let d_f = saturation * self.tanh_factor;
            let d_nc = p.f_tls_tan_delta * self.tanh_factor * p.beta_pow * n
                * u.powf(-p.beta_pow - 1.0)
                / (p.n_c * p.n_c);
            let d_beta = -p.f_tls_tan_delta * self.tanh_factor * u.ln() * saturation;
            let d_qr = -1.0 / (p.q_r * p.q_r);
            let grad = [d_f, d_nc, d_beta, d_qr];
            for j in 0..4 {
                jac[(i, j)] = w * grad[j] * scale[j];
            }
        }
        Some(jac)
    }
}

/// Fit the four-parameter TLS model to a power sweep at fixed temperature.
/// Weighted by inverse variance when every point carries an uncertainty,
/// uniformly otherwise.
pub fn fit_power_sweep(
    points: &[PowerSweepPoint],
    f0: f64,
    temperature: f64,
) -> Result<TlsPowerFit, TlsError> {
    if points.len() < 6 {
        return Err(TlsError::InvalidInput(format!(
            "{} points; at least 6 required",
            points.len()
        )));
    }
    if f0 <= 0.0 || temperature <= 0.0 {
        return Err(TlsError::InvalidInput("f0 and temperature must be positive".into()));
    }
    for p in points {
        if p.n_photon < 0.0 || p.q_int <= 0.0 {
            return Err(TlsError::InvalidInput(
                "photon numbers must be >= 0 and quality factors > 0".into(),
            ));
        }
    }
    let positive: Vec<f64> = points.iter().map(|p| p.n_photon).filter(|&n| n > 0.0).collect();
    let (n_min, n_max) = positive
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &n| (lo.min(n), hi.max(n)));
    if positive.len() < 2 || n_max / n_min < 100.0 {
        return Err(TlsError::IllPosed(format!(
            "photon-number dynamic range {:.1} is below the required factor 100",
            if positive.len() < 2 { 0.0 } else { n_max / n_min }
        )));
    }

    let y: Vec<f64> = points.iter().map(|p| 1.0 / p.q_int).collect();
    let all_sigma = points.iter().all(|p| p.q_sigma.is_some_and(|s| s > 0.0));
    let weights: Vec<f64> = points
        .iter()
        .map(|p| {
            if all_sigma {
                let sigma_y = p.q_sigma.unwrap() / (p.q_int * p.q_int);
                1.0 / sigma_y
            } else {
                1.0
            }
        })
        .collect();

    let th = tanh_factor(f0, temperature);
    let y_max = y.iter().cloned().fold(0.0_f64, f64::max);
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let swing = (y_max - y_min).max(y_max * 1e-6);
    let f_guess = swing / th;
    let q_r_guess = 1.0 / y_min;
    let n_c_guess = midpoint_crossing(points, (y_max + y_min) / 2.0)
        .unwrap_or((n_min * n_max).sqrt());

    let problem = PowerSweepProblem {
        n: points.iter().map(|p| p.n_photon).collect(),
        y,
        weights,
        tanh_factor: th,
    };
    let theta0 = DVector::from_vec(vec![
        f_guess.ln(),
        n_c_guess.ln(),
        beta_to_logit(BETA_INITIAL),
        q_r_guess.ln(),
    ]);
    let lm = optim::levenberg_marquardt(&problem, &theta0, &LmConfig::default())
        .map_err(|e| TlsError::InvalidInput(e.to_string()))?;
    if !lm.converged {
        return Err(TlsError::NotConverged {
            iterations: lm.iterations,
        });
    }

    let params = problem.physical(&lm.params);
    // Map the covariance from the internal coordinates to physical units.
    let scale = [
        params.f_tls_tan_delta,
        params.n_c,
        beta_logit_derivative(lm.params[2]),
        params.q_r,
    ];
    let mut covariance = vec![0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            covariance[i * 4 + j] = lm.covariance[(i, j)] * scale[i] * scale[j];
        }
    }
    let sigma_nc = covariance[5].max(0.0).sqrt();
    let degenerate =
        lm.normal_matrix_condition > 1e12 || !sigma_nc.is_finite() || sigma_nc > params.n_c;
    Ok(TlsPowerFit {
        params,
        covariance,
        residual_rms: lm.residual_rms,
        degenerate,
    })
}

/// Photon number at which the sweep crosses a loss level, by linear scan of
/// the n-sorted points.
fn midpoint_crossing(points: &[PowerSweepPoint], level: f64) -> Option<f64> {
    let mut sorted: Vec<&PowerSweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.n_photon.total_cmp(&b.n_photon));
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (ya, yb) = (1.0 / a.q_int, 1.0 / b.q_int);
        if (ya - level) * (yb - level) <= 0.0 && a.n_photon > 0.0 && b.n_photon > 0.0 {
            return Some((a.n_photon * b.n_photon).sqrt());
        }
    }
    None
}

/// Fit 1/Q_intr = A·tanh(ħω/2k_BT) + 1/Q_r to a fixed-power temperature
/// sweep. Linear in both parameters, solved by weighted normal equations.
pub fn fit_temperature_sweep(
    points: &[TemperatureSweepPoint],
    f0: f64,
) -> Result<TemperatureFit, TlsError> {
    if points.len() < 5 {
        return Err(TlsError::InvalidInput(format!(
            "{} temperatures; at least 5 required",
            points.len()
        )));
    }
    if f0 <= 0.0 {
        return Err(TlsError::InvalidInput("f0 must be positive".into()));
    }
    for p in points {
        if p.temperature_k <= 0.0 || p.q_intr <= 0.0 {
            return Err(TlsError::InvalidInput(
                "temperatures and quality factors must be positive".into(),
            ));
        }
    }
    let th: Vec<f64> = points.iter().map(|p| tanh_factor(f0, p.temperature_k)).collect();
    let th_max = th.iter().cloned().fold(0.0_f64, f64::max);
    let th_min = th.iter().cloned().fold(f64::INFINITY, f64::min);
    if (th_max - th_min) / th_max < 0.10 {
        return Err(TlsError::IllPosed(format!(
            "tanh factor varies by only {:.2}% over the temperature range; 10% required",
            100.0 * (th_max - th_min) / th_max
        )));
    }

    let all_sigma = points.iter().all(|p| p.q_sigma.is_some_and(|s| s > 0.0));
    let mut xtx = Matrix2::zeros();
    let mut xty = Vector2::zeros();
    let mut wsum = 0.0;
    for (p, &t) in points.iter().zip(&th) {
        let y = 1.0 / p.q_intr;
        let w = if all_sigma {
            let sigma_y = p.q_sigma.unwrap() / (p.q_intr * p.q_intr);
            1.0 / (sigma_y * sigma_y)
        } else {
            1.0
        };
        xtx[(0, 0)] += w * t * t;
        xtx[(0, 1)] += w * t;
        xtx[(1, 0)] += w * t;
        xtx[(1, 1)] += w;
        xty[0] += w * t * y;
        xty[1] += w * y;
        wsum += w;
    }
    let _ = wsum;
    let inv = xtx.try_inverse().ok_or_else(|| {
        TlsError::IllPosed("temperature design matrix is singular".into())
    })?;
    let coeffs = inv * xty;
    let amplitude = coeffs[0];
    let intercept = coeffs[1];

    let mut sse = 0.0;
    for (p, &t) in points.iter().zip(&th) {
        let y = 1.0 / p.q_intr;
        let w = if all_sigma {
            let sigma_y = p.q_sigma.unwrap() / (p.q_intr * p.q_intr);
            1.0 / (sigma_y * sigma_y)
        } else {
            1.0
        };
        let r = amplitude * t + intercept - y;
        sse += w * r * r;
    }
    let dof = (points.len() - 2).max(1) as f64;
    // With inverse-variance weights the scatter is already normalized, so
    // the s² factor corrects for over/under-stated sigmas.
    let s2 = sse / dof;
    let cov = inv * s2;

    Ok(TemperatureFit {
        saturated_tls_loss: amplitude,
        q_r: 1.0 / intercept,
        covariance: vec![cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]],
        residual_rms: (sse / points.len() as f64).sqrt(),
    })
}

/// Average Q_int over the points with n below the critical photon number.
pub fn low_power_q(points: &[(f64, f64)], n_c: f64) -> Result<f64, TlsError> {
    if n_c <= 0.0 {
        return Err(TlsError::InvalidInput("n_c must be positive".into()));
    }
    let selected: Vec<f64> = points
        .iter()
        .filter(|(n, _)| *n < n_c)
        .map(|(_, q)| *q)
        .collect();
    if selected.is_empty() {
        return Err(TlsError::EmptySelection(format!(
            "no sweep points below n_c = {n_c}"
        )));
    }
    Ok(selected.iter().sum::<f64>() / selected.len() as f64)
}

/// Upper bound on the thickness-loss-tangent product of one interface:
/// t_i·tanδ_i ≤ F·tanδ_TLS / p̃_i, returned in nm for p̃ in ppm/nm.
pub fn interface_bound(f_tls_tan_delta: f64, p_tilde_ppm_per_nm: f64) -> Result<f64, TlsError> {
    if f_tls_tan_delta <= 0.0 || p_tilde_ppm_per_nm <= 0.0 {
        return Err(TlsError::InvalidInput(
            "bound inputs must be positive".into(),
        ));
    }
    Ok(f_tls_tan_delta / (p_tilde_ppm_per_nm * 1e-6))
}

/// Upper bound on the quasiparticle density (µm⁻³):
/// n_qp ≤ (π/α)·√(h·f0·Δ/2)·D(E_F)/Q_r.
pub fn quasiparticle_bound(
    q_r: f64,
    alpha: f64,
    f0: f64,
    constants: &MaterialConstants,
) -> Result<f64, TlsError> {
    constants.validate()?;
    if q_r <= 0.0 || f0 <= 0.0 || !(0.0 < alpha && alpha < 1.0) {
        return Err(TlsError::InvalidInput(
            "require q_r > 0, f0 > 0 and kinetic fraction in (0, 1)".into(),
        ));
    }
    let energy_scale = (PLANCK_H * f0 * constants.gap_energy / 2.0).sqrt();
    Ok(std::f64::consts::PI / alpha * energy_scale * constants.dos_fermi / q_r)
}
