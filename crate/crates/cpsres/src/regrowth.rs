//! Nb oxide regrowth: stoichiometry, the forward frequency-shift model, its
//! inversion from measured shifts, and metal-air loss-tangent extraction.
//!
//! A regrown oxide layer of thickness Δt_MA consumes metal according to the
//! Nb₂O₅ stoichiometry, Δt_Nb = β·ρ_Nb₂O₅·Δt_MA/ρ_Nb with
//! β = 2A_Nb/(2A_Nb + 5A_O). The added dielectric raises the capacitance
//! and the thinner film raises the inductance, so to first order in the
//! small per-unit-length shifts the resonance moves by
//! Δf/f = −(γ_C + γ_L)/2 from f ∝ 1/√(LC).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::field_solver::{self, CpsGeometry, GridSpec};
use crate::inductance_solver::{self, FilamentSpec};
use crate::tls_model::MaterialConstants;

/// Nb₂O₅ stoichiometry: the Nb mass fraction and the densities that convert
/// oxide growth into metal consumption.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StoichiometryModel {
    /// Nb mass fraction of Nb₂O₅, 2A_Nb/(2A_Nb + 5A_O).
    pub beta_stoich: f64,
    pub rho_nb: f64,
    pub rho_nb2o5: f64,
    pub a_nb: f64,
    pub a_o: f64,
}

impl StoichiometryModel {
    /// Build from atomic masses and densities; β follows by construction.
    pub fn new(a_nb: f64, a_o: f64, rho_nb: f64, rho_nb2o5: f64) -> Result<Self, RegrowthError> {
        if !(a_nb > 0.0 && a_o > 0.0 && rho_nb > 0.0 && rho_nb2o5 > 0.0) {
            return Err(RegrowthError::InvalidInput(
                "atomic masses and densities must be positive".into(),
            ));
        }
        Ok(StoichiometryModel {
            beta_stoich: 2.0 * a_nb / (2.0 * a_nb + 5.0 * a_o),
            rho_nb,
            rho_nb2o5,
            a_nb,
            a_o,
        })
    }

    pub fn from_constants(constants: &MaterialConstants) -> Result<Self, RegrowthError> {
        StoichiometryModel::new(
            constants.a_nb,
            constants.a_o,
            constants.rho_nb,
            constants.rho_nb2o5,
        )
    }

    /// Metal consumed per unit of oxide grown (dimensionless, < 1 for Nb₂O₅).
    pub fn consumption_ratio(&self) -> f64 {
        self.beta_stoich * self.rho_nb2o5 / self.rho_nb
    }
}

/// Metal thickness consumed by an oxide layer of thickness `delta_t_ma`.
pub fn nb_consumption(delta_t_ma: f64, model: &StoichiometryModel) -> Result<f64, RegrowthError> {
    if delta_t_ma < 0.0 {
        return Err(RegrowthError::InvalidInput(
            "oxide thickness must be >= 0".into(),
        ));
    }
    Ok(model.consumption_ratio() * delta_t_ma)
}

/// Before/after measurement pair for one device across the re-oxidation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegrowthObservation {
    pub device_id: String,
    pub f0_before: f64,
    pub f0_after: f64,
    pub q_intr_before: f64,
    pub q_intr_after: f64,
    /// Effective metal-air participation per unit thickness (ppm/nm),
    /// corner-absorbed.
    pub p_tilde_ma_eff: f64,
}

impl RegrowthObservation {
    pub fn validate(&self) -> Result<Vec<String>, RegrowthError> {
        if !(self.f0_before > 0.0 && self.f0_after > 0.0)
            || !(self.q_intr_before > 0.0 && self.q_intr_after > 0.0)
            || !(self.p_tilde_ma_eff > 0.0)
        {
            return Err(RegrowthError::InvalidInput(format!(
                "observation {} has non-positive entries",
                self.device_id
            )));
        }
        // Upward shifts or improved Q are data-quality warnings, not errors.
        let mut warnings = Vec::new();
        if self.f0_after > self.f0_before {
            warnings.push(format!(
                "device {}: resonance moved up in frequency after exposure",
                self.device_id
            ));
        }
        if self.q_intr_after > self.q_intr_before {
            warnings.push(format!(
                "device {}: intrinsic quality factor improved after exposure",
                self.device_id
            ));
        }
        Ok(warnings)
    }

    /// Measured fractional frequency shift (negative for downward shifts).
    pub fn fractional_shift(&self) -> f64 {
        (self.f0_after - self.f0_before) / self.f0_before
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegrowthError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no regrowth signal: every observed frequency shift is non-negative")]
    NoRegrowthSignal,
    #[error(transparent)]
    Field(#[from] field_solver::SolverError),
    #[error(transparent)]
    Inductance(#[from] inductance_solver::InductanceError),
}

/// Forward model tying one device's geometry to the solvers.
#[derive(Debug, Clone)]
pub struct FrequencyShiftModel {
    pub geom: CpsGeometry,
    pub field_grid: GridSpec,
    pub filament_spec: FilamentSpec,
    pub stoichiometry: StoichiometryModel,
    pub lambda_london: f64,
    /// Nominal resonance frequency (Hz), carried into the inductance run.
    pub f0: f64,
}

impl FrequencyShiftModel {
    /// Fractional frequency shift Δf/f for an oxide regrowth `delta_t_ma`.
    pub fn frequency_shift(&self, delta_t_ma: f64) -> Result<f64, RegrowthError> {
        if delta_t_ma < 0.0 {
            return Err(RegrowthError::InvalidInput(
                "oxide thickness must be >= 0".into(),
            ));
        }
        if delta_t_ma == 0.0 {
            return Ok(0.0);
        }
        let delta_t_nb = nb_consumption(delta_t_ma, &self.stoichiometry)?;
        let cap = field_solver::capacitance_shift(
            &self.geom,
            delta_t_ma,
            delta_t_nb,
            &self.field_grid,
        )?;
        let gamma_l = inductance_solver::inductance_shift(
            &self.geom,
            delta_t_nb,
            self.f0,
            self.lambda_london,
            &self.filament_spec,
        )?;
        Ok(-(cap.shift + gamma_l) / 2.0)
    }
}

/// Sampled Δf/f versus Δt_MA for one device, with monotone cubic
/// interpolation so the scalar inversion does not re-run the solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftCurve {
    /// Oxide thicknesses (m), strictly increasing, starting at 0.
    pub delta_t_ma: Vec<f64>,
    /// Fractional frequency shifts at the samples.
    pub shift: Vec<f64>,
    /// Interior derivative estimates (Fritsch–Carlson).
    slopes: Vec<f64>,
}

impl ShiftCurve {
    /// Sample the forward model at the given thicknesses (must include 0).
    pub fn sample(model: &FrequencyShiftModel, thicknesses: &[f64]) -> Result<Self, RegrowthError> {
        if thicknesses.len() < 2 || thicknesses[0] != 0.0 {
            return Err(RegrowthError::InvalidInput(
                "curve thicknesses must start at 0 and contain at least two points".into(),
            ));
        }
        if !thicknesses.windows(2).all(|w| w[1] > w[0]) {
            return Err(RegrowthError::InvalidInput(
                "curve thicknesses must be strictly increasing".into(),
            ));
        }
        let mut shift = Vec::with_capacity(thicknesses.len());
        for &t in thicknesses {
            shift.push(model.frequency_shift(t)?);
        }
        Ok(ShiftCurve::from_samples(thicknesses.to_vec(), shift))
    }

    pub fn from_samples(delta_t_ma: Vec<f64>, shift: Vec<f64>) -> Self {
        let slopes = monotone_slopes(&delta_t_ma, &shift);
        ShiftCurve { delta_t_ma, shift, slopes }
    }

    /// Interpolated Δf/f; clamps to the sampled range.
    pub fn evaluate(&self, delta_t_ma: f64) -> f64 {
        let xs = &self.delta_t_ma;
        let n = xs.len();
        if delta_t_ma <= xs[0] {
            return self.shift[0];
        }
        if delta_t_ma >= xs[n - 1] {
            return self.shift[n - 1];
        }
        let k = xs.partition_point(|&x| x <= delta_t_ma) - 1;
        let h = xs[k + 1] - xs[k];
        let t = (delta_t_ma - xs[k]) / h;
        let (y0, y1) = (self.shift[k], self.shift[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + m0 * (t3 - 2.0 * t2 + t)
            + y1 * (-2.0 * t3 + 3.0 * t2)
            + m1 * (t3 - t2)
    }

    pub fn max_thickness(&self) -> f64 {
        *self.delta_t_ma.last().expect("non-empty curve")
    }
}

/// Fritsch–Carlson monotone cubic slope limiter.
fn monotone_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut deltas = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        deltas.push((ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]));
    }
    let mut slopes = vec![0.0; n];
    slopes[0] = deltas[0];
    slopes[n - 1] = deltas[n - 2];
    for k in 1..n - 1 {
        slopes[k] = if deltas[k - 1] * deltas[k] > 0.0 {
            2.0 / (1.0 / deltas[k - 1] + 1.0 / deltas[k])
        } else {
            0.0
        };
    }
    for k in 0..n - 1 {
        if deltas[k] == 0.0 {
            slopes[k] = 0.0;
            slopes[k + 1] = 0.0;
            continue;
        }
        let a = slopes[k] / deltas[k];
        let b = slopes[k + 1] / deltas[k];
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            slopes[k] = tau * a * deltas[k];
            slopes[k + 1] = tau * b * deltas[k];
        }
    }
    slopes
}

/// Result of the shared-thickness inversion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThicknessEstimate {
    /// Best-fit oxide regrowth thickness (m).
    pub delta_t_ma: f64,
    /// 1σ from the quadratic expansion of the cost at the minimum
    /// (zero when only one observation pins the thickness exactly).
    pub sigma: f64,
    /// Root-mean-square residual of the fractional shifts at the optimum.
    pub residual_rms: f64,
    /// Per-device (measured, modeled) fractional shifts at the optimum.
    pub per_device: Vec<(String, f64, f64)>,
}

/// Invert the measured frequency shifts for a single shared oxide thickness
/// by bracketed scalar minimization over the sampled curve range
/// (one oxide grows everywhere equally).
pub fn invert_thickness(
    observations: &[RegrowthObservation],
    curves: &BTreeMap<String, ShiftCurve>,
) -> Result<ThicknessEstimate, RegrowthError> {
    if observations.is_empty() {
        return Err(RegrowthError::InvalidInput("no observations".into()));
    }
    for obs in observations {
        obs.validate()?;
        if !curves.contains_key(&obs.device_id) {
            return Err(RegrowthError::InvalidInput(format!(
                "no shift curve for device {}",
                obs.device_id
            )));
        }
    }
    if observations.iter().all(|o| o.fractional_shift() >= 0.0) {
        return Err(RegrowthError::NoRegrowthSignal);
    }

    let hi = observations
        .iter()
        .map(|o| curves[&o.device_id].max_thickness())
        .fold(f64::INFINITY, f64::min);
    let cost = |t: f64| -> f64 {
        observations
            .iter()
            .map(|o| {
                let model = curves[&o.device_id].evaluate(t);
                let r = o.fractional_shift() - model;
                r * r
            })
            .sum()
    };

    let best = golden_section_min(&cost, 0.0, hi, 1e-13);
    let cost_min = cost(best);
    let n = observations.len();
    let residual_rms = (cost_min / n as f64).sqrt();

    // Quadratic expansion of the cost around the minimum.
    let h = (hi * 1e-3).max(1e-12);
    let curvature = (cost(best + h) - 2.0 * cost_min + cost((best - h).max(0.0))) / (h * h);
    let sigma = if n > 1 && curvature > 0.0 {
        let variance = cost_min / (n - 1) as f64;
        (2.0 * variance / curvature).sqrt()
    } else {
        0.0
    };

    let per_device = observations
        .iter()
        .map(|o| {
            (
                o.device_id.clone(),
                o.fractional_shift(),
                curves[&o.device_id].evaluate(best),
            )
        })
        .collect();
    Ok(ThicknessEstimate {
        delta_t_ma: best,
        sigma,
        residual_rms,
        per_device,
    })
}

fn golden_section_min(cost: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = cost(c);
    let mut fd = cost(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = cost(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = cost(d);
        }
    }
    0.5 * (lo + hi)
}

/// Per-device and averaged metal-air loss tangent extracted from the
/// intrinsic-loss change across the re-oxidation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossTangentExtraction {
    /// (device, tanδ_MA, negative-value warning).
    pub per_device: Vec<(String, f64, bool)>,
    /// Unweighted mean over devices.
    pub average: f64,
    /// Standard error of the mean over devices.
    pub std_error: f64,
    pub delta_t_ma: f64,
}

/// tanδ_MA = Δ(1/Q_intr) / (p̃_MA,eff·Δt_MA) per device; negative values
/// (improved Q) are reported with a warning flag rather than suppressed.
pub fn extract_ma_loss_tangent(
    observations: &[RegrowthObservation],
    delta_t_ma: f64,
) -> Result<LossTangentExtraction, RegrowthError> {
    if observations.is_empty() {
        return Err(RegrowthError::InvalidInput("no observations".into()));
    }
    if !(delta_t_ma > 0.0) {
        return Err(RegrowthError::InvalidInput(
            "oxide thickness must be positive".into(),
        ));
    }
    let mut per_device = Vec::with_capacity(observations.len());
    for obs in observations {
        obs.validate()?;
        let delta_loss = 1.0 / obs.q_intr_after - 1.0 / obs.q_intr_before;
        // p̃ in ppm/nm is 1e3 per meter of thickness.
        let denominator = obs.p_tilde_ma_eff * 1e3 * delta_t_ma;
        let tan_delta = delta_loss / denominator;
        per_device.push((obs.device_id.clone(), tan_delta, tan_delta < 0.0));
    }
    let n = per_device.len() as f64;
    let average = per_device.iter().map(|(_, v, _)| v).sum::<f64>() / n;
    let std_error = if per_device.len() > 1 {
        let var = per_device
            .iter()
            .map(|(_, v, _)| (v - average) * (v - average))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(LossTangentExtraction {
        per_device,
        average,
        std_error,
        delta_t_ma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn handbook_model() -> StoichiometryModel {
        StoichiometryModel::new(92.906, 15.999, 8570.0, 4600.0).unwrap()
    }

    #[test]
    fn stoichiometric_mass_fraction() {
        let model = handbook_model();
        // 2·92.906/(2·92.906 + 5·15.999) = 185.812/265.807.
        assert_relative_eq!(model.beta_stoich, 0.699, epsilon = 1e-3);
        assert_relative_eq!(model.beta_stoich, 185.812 / 265.807, max_relative = 1e-12);
    }

    #[test]
    fn consumption_is_less_than_growth() {
        let model = handbook_model();
        assert_eq!(nb_consumption(0.0, &model).unwrap(), 0.0);
        let consumed = nb_consumption(2.5e-9, &model).unwrap();
        assert!(consumed > 0.0 && consumed < 2.5e-9);
        assert_relative_eq!(model.consumption_ratio(), 0.3752, epsilon = 1e-3);
    }

    fn cps1_model() -> FrequencyShiftModel {
        FrequencyShiftModel {
            geom: CpsGeometry::bare(10e-6, 10e-6, 7.115e-3, 145e-9, 10.0),
            field_grid: GridSpec::shift(),
            filament_spec: FilamentSpec { nx: 24, ny: 6, grading: 1.35 },
            stoichiometry: handbook_model(),
            lambda_london: 39e-9,
            f0: 4.495e9,
        }
    }

    #[test]
    fn frequency_shift_is_negative_and_monotone() {
        let model = cps1_model();
        assert_eq!(model.frequency_shift(0.0).unwrap(), 0.0);
        let mut previous = 0.0;
        for delta_nm in [1.0, 2.5, 5.0] {
            let shift = model.frequency_shift(delta_nm * 1e-9).unwrap();
            assert!(shift < previous, "shift {shift} at {delta_nm} nm");
            previous = shift;
        }
        // Order of magnitude from the reported measurements.
        assert!(previous < -1e-5 && previous > -1e-2, "shift {previous}");
    }

    #[test]
    fn curve_interpolation_matches_samples() {
        let curve = ShiftCurve::from_samples(
            vec![0.0, 1e-9, 2.5e-9, 5e-9, 10e-9, 20e-9],
            vec![0.0, -1.0e-4, -2.4e-4, -4.6e-4, -8.8e-4, -16.5e-4],
        );
        for (x, y) in curve.delta_t_ma.iter().zip(&curve.shift) {
            assert_relative_eq!(curve.evaluate(*x), *y, max_relative = 1e-12);
        }
        // Monotone between samples.
        let mut prev = 0.1;
        for k in 0..=100 {
            let v = curve.evaluate(20e-9 * k as f64 / 100.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    fn synthetic_curves() -> BTreeMap<String, ShiftCurve> {
        // Slightly different response slopes per device.
        let mut curves = BTreeMap::new();
        for (name, scale) in [("a", 1.0), ("b", 0.8), ("c", 0.55), ("d", 0.4)] {
            let xs = vec![0.0, 1e-9, 2.5e-9, 5e-9, 10e-9, 20e-9];
            let ys: Vec<f64> = xs
                .iter()
                .map(|&x: &f64| {
                    let x_nm = x / 1e-9;
                    -scale * (1.1e-4 * x_nm - 1.5e-6 * x_nm * x_nm)
                })
                .collect();
            curves.insert(name.to_string(), ShiftCurve::from_samples(xs, ys));
        }
        curves
    }

    fn observation(id: &str, shift: f64) -> RegrowthObservation {
        let f0 = 5e9;
        RegrowthObservation {
            device_id: id.into(),
            f0_before: f0,
            f0_after: f0 * (1.0 + shift),
            q_intr_before: 2.0e6,
            q_intr_after: 1.4e6,
            p_tilde_ma_eff: 29.4,
        }
    }

    #[test]
    fn inversion_recovers_the_generating_thickness() {
        let curves = synthetic_curves();
        let truth = 2.5e-9;
        let observations: Vec<RegrowthObservation> = curves
            .iter()
            .map(|(id, curve)| observation(id, curve.evaluate(truth)))
            .collect();
        let estimate = invert_thickness(&observations, &curves).unwrap();
        assert_relative_eq!(estimate.delta_t_ma, truth, max_relative = 1e-4);
        assert!(estimate.residual_rms < 1e-9);
    }

    #[test]
    fn single_observation_interpolates_exactly() {
        let curves = synthetic_curves();
        let truth = 3.3e-9;
        let obs = vec![observation("a", curves["a"].evaluate(truth))];
        let estimate = invert_thickness(&obs, &curves).unwrap();
        assert_relative_eq!(estimate.delta_t_ma, truth, max_relative = 1e-4);
        assert!(estimate.residual_rms < 1e-10);
        assert_eq!(estimate.sigma, 0.0);
    }

    #[test]
    fn all_positive_shifts_are_rejected() {
        let curves = synthetic_curves();
        let obs = vec![observation("a", 1e-5), observation("b", 2e-6)];
        assert!(matches!(
            invert_thickness(&obs, &curves),
            Err(RegrowthError::NoRegrowthSignal)
        ));
    }

    #[test]
    fn noisy_inversion_recovers_within_ten_percent() {
        use rand::{Rng, SeedableRng};
        let curves = synthetic_curves();
        let truth = 2.5e-9;
        let mut errors = Vec::new();
        for seed in 0..50u64 {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let observations: Vec<RegrowthObservation> = curves
                .iter()
                .map(|(id, curve)| {
                    let noisy = curve.evaluate(truth) * (1.0 + 0.1 * rng.random_range(-1.0..1.0));
                    observation(id, noisy)
                })
                .collect();
            let estimate = invert_thickness(&observations, &curves).unwrap();
            errors.push((estimate.delta_t_ma - truth).abs() / truth);
        }
        errors.sort_by(f64::total_cmp);
        assert!(errors[errors.len() / 2] < 0.10);
    }

    #[test]
    fn loss_tangent_matches_hand_arithmetic() {
        // 30% Q degradation at p̃ = 29.4 ppm/nm over 2.5 nm of oxide.
        let obs = vec![RegrowthObservation {
            device_id: "cps3".into(),
            f0_before: 5.47e9,
            f0_after: 5.4694e9,
            q_intr_before: 2.0e6,
            q_intr_after: 1.4e6,
            p_tilde_ma_eff: 29.4,
        }];
        let result = extract_ma_loss_tangent(&obs, 2.5e-9).unwrap();
        // (1/1.4e6 − 1/2.0e6) / (29.4e-6/nm · 2.5 nm) = 2.9155e-3.
        assert_relative_eq!(result.average, 2.9155e-3, max_relative = 1e-3);
        assert!(!result.per_device[0].2);

        // Doubling the thickness halves every per-device value.
        let doubled = extract_ma_loss_tangent(&obs, 5.0e-9).unwrap();
        assert_relative_eq!(doubled.average, result.average / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn loss_tangent_edge_cases() {
        let equal_q = vec![RegrowthObservation {
            device_id: "x".into(),
            f0_before: 5e9,
            f0_after: 4.999e9,
            q_intr_before: 2.0e6,
            q_intr_after: 2.0e6,
            p_tilde_ma_eff: 20.0,
        }];
        let result = extract_ma_loss_tangent(&equal_q, 2.5e-9).unwrap();
        assert_eq!(result.average, 0.0);

        // Improved Q comes back flagged, not suppressed.
        let improved = vec![RegrowthObservation {
            device_id: "y".into(),
            f0_before: 5e9,
            f0_after: 4.999e9,
            q_intr_before: 1.4e6,
            q_intr_after: 2.0e6,
            p_tilde_ma_eff: 20.0,
        }];
        let result = extract_ma_loss_tangent(&improved, 2.5e-9).unwrap();
        assert!(result.average < 0.0);
        assert!(result.per_device[0].2);
    }

    #[test]
    fn loss_tangent_average_is_order_invariant() {
        let mut observations = vec![
            observation("a", -1e-4),
            observation("b", -8e-5),
            observation("c", -6e-5),
        ];
        let forward = extract_ma_loss_tangent(&observations, 2.5e-9).unwrap();
        observations.reverse();
        let reversed = extract_ma_loss_tangent(&observations, 2.5e-9).unwrap();
        assert_relative_eq!(forward.average, reversed.average, max_relative = 1e-12);
        assert_relative_eq!(forward.std_error, reversed.std_error, max_relative = 1e-12);
    }

    #[test]
    fn extraction_is_consistent_with_the_interface_bound() {
        // tanδ_MA·Δt_MA from the extraction never exceeds the bound
        // F·tanδ_TLS/p̃ evaluated on the same participation.
        let obs = vec![RegrowthObservation {
            device_id: "cps3".into(),
            f0_before: 5.47e9,
            f0_after: 5.4694e9,
            q_intr_before: 2.0e6,
            q_intr_after: 1.4e6,
            p_tilde_ma_eff: 29.4,
        }];
        let extraction = extract_ma_loss_tangent(&obs, 2.5e-9).unwrap();
        let product_nm = extraction.average * 2.5;
        let bound_nm = crate::tls_model::interface_bound(1.0 / 3.4e6, 29.4).unwrap();
        assert!(product_nm <= bound_nm, "{product_nm} > {bound_nm}");
    }
}
