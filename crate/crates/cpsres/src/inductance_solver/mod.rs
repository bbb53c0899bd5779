//! Filament-decomposition partial-inductance extraction for the two CPS
//! strips.
//!
//! Each strip cross-section is split into rectangular filaments with uniform
//! axial current; partial self and mutual inductances come from the exact
//! rectangular-bar formulas in [`bars`]. All filaments of a strip are tied
//! in parallel between the strip's end terminals, so the filament currents
//! distribute to make the end-to-end voltage equal — the same quasi-static
//! model the reference inductance tool uses for thick conductors. The
//! superconducting case adds a per-filament kinetic series term
//! µ0·λ²·l/area, which reproduces a London model in the lossless limit.
//!
//! The "normal, nearly lossless" reference (the σ = 1e30 S/m convention) is
//! the same solve without the kinetic term: at any nonzero frequency a
//! lossless conductor distributes current to minimize magnetic energy, and
//! the kinetic fraction is defined against that distribution so that
//! α → 0 as λ → 0.

pub mod bars;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::VACUUM_PERMEABILITY;
use crate::field_solver::CpsGeometry;
use bars::Bar;

/// Inductance matrix entries and the differential-mode combination.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InductanceResult {
    /// Self-inductance of the first strip (H).
    pub l1: f64,
    /// Self-inductance of the second strip (H).
    pub l2: f64,
    /// Mutual inductance between the strips (H).
    pub m: f64,
    /// Differential-mode inductance L1 + L2 − 2M (H).
    pub l_eff: f64,
    /// L_eff divided by the resonator length (H/m).
    pub l_per_length: f64,
}

/// Conductor model for one extraction run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConductorModel {
    /// Lossless normal metal (the σ → ∞ reference): magnetic energy only.
    NormalLossless,
    /// Superconductor with the given London penetration depth (m).
    Superconducting { london_depth: f64 },
}

/// Filament grid for one strip cross-section: counts across width and
/// thickness, graded geometrically toward the surfaces.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilamentSpec {
    pub nx: usize,
    pub ny: usize,
    /// Geometric grading ratio toward the strip surfaces.
    pub grading: f64,
}

impl Default for FilamentSpec {
    fn default() -> Self {
        FilamentSpec {
            nx: 40,
            ny: 10,
            grading: 1.3,
        }
    }
}

impl FilamentSpec {
    pub fn validate(&self) -> Result<(), InductanceError> {
        if self.nx < 2 || self.ny < 1 || !(self.grading >= 1.0) {
            return Err(InductanceError::InvalidInput(
                "need nx >= 2, ny >= 1 and grading >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Largest surface-adjacent cell, to check the current-crowding scale.
    pub fn edge_cells(&self, width: f64, thickness: f64) -> (f64, f64) {
        (
            graded_boundaries(0.0, width, self.nx, self.grading)[1],
            graded_boundaries(0.0, thickness, self.ny, self.grading)[1],
        )
    }

    fn refined(&self) -> FilamentSpec {
        FilamentSpec {
            nx: self.nx * 3 / 2,
            ny: (self.ny * 3 / 2).max(self.ny + 1),
            grading: self.grading,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InductanceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("singular filament system (reciprocal condition estimate {rcond:.3e})")]
    IllConditioned { rcond: f64 },
}

/// Cell boundaries graded geometrically from both ends toward the middle.
fn graded_boundaries(lo: f64, hi: f64, n: usize, ratio: f64) -> Vec<f64> {
    let mut sizes = vec![0.0; n];
    for i in 0..n {
        let from_edge = i.min(n - 1 - i);
        sizes[i] = ratio.powi(from_edge as i32);
    }
    let total: f64 = sizes.iter().sum();
    let span = hi - lo;
    let mut bounds = Vec::with_capacity(n + 1);
    let mut x = lo;
    bounds.push(x);
    for size in &sizes {
        x += size / total * span;
        bounds.push(x);
    }
    bounds[n] = hi;
    bounds
}

/// Filament decomposition of both strips. The first strip spans
/// x ∈ [g/2, g/2+w], the second is its mirror image.
fn build_filaments(geom: &CpsGeometry, spec: &FilamentSpec, t_metal: f64) -> Vec<Bar> {
    let xs = graded_boundaries(geom.gap / 2.0, geom.gap / 2.0 + geom.width, spec.nx, spec.grading);
    let ys = graded_boundaries(0.0, t_metal, spec.ny, spec.grading);
    let mut bars = Vec::with_capacity(2 * spec.nx * spec.ny);
    for strip in 0..2 {
        for i in 0..spec.nx {
            for j in 0..spec.ny {
                let (x0, x1) = if strip == 0 {
                    (xs[i], xs[i + 1])
                } else {
                    // Exact mirror so the symmetric geometry yields l1 = l2
                    // to round-off.
                    (-xs[i + 1], -xs[i])
                };
                bars.push(Bar {
                    x0,
                    x1,
                    y0: ys[j],
                    y1: ys[j + 1],
                    len: geom.length,
                });
            }
        }
    }
    bars
}

/// Dense partial-inductance matrix over all filaments, with the kinetic
/// diagonal for the superconducting model.
fn assemble_matrix(bars: &[Bar], model: ConductorModel) -> DMatrix<f64> {
    let n = bars.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for j in 0..=i {
                row[j] = if i == j {
                    bars::self_inductance(&bars[i])
                } else {
                    bars::mutual_inductance(&bars[i], &bars[j])
                };
            }
            row
        })
        .collect();
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            matrix[(i, j)] = rows[i][j];
            matrix[(j, i)] = rows[i][j];
        }
    }
    if let ConductorModel::Superconducting { london_depth } = model {
        for (i, bar) in bars.iter().enumerate() {
            matrix[(i, i)] += VACUUM_PERMEABILITY * london_depth * london_depth * bar.len
                / bar.area();
        }
    }
    matrix
}

/// Solve the parallel-filament system and return the terminal inductances
/// (L1, L2, M). The filaments of each strip share one end-to-end voltage, so
/// the 2×2 terminal matrix is L = (Sᵀ·P⁻¹·S)⁻¹ with S the strip selector;
/// P is symmetric positive definite and is factored by Cholesky, which keeps
/// the solve well-scaled (the raw KKT form mixes henry-scale entries with
/// order-one constraints and loses most of the significant digits).
fn terminal_inductances(
    matrix: &DMatrix<f64>,
    filaments_per_strip: usize,
) -> Result<(f64, f64, f64), InductanceError> {
    let n = matrix.nrows();
    debug_assert_eq!(n, 2 * filaments_per_strip);
    let chol = matrix.clone().cholesky().ok_or_else(|| {
        InductanceError::IllConditioned {
            rcond: spd_rcond_estimate(matrix),
        }
    })?;
    let mut selector = DMatrix::zeros(n, 2);
    for k in 0..n {
        selector[(k, k / filaments_per_strip)] = 1.0;
    }
    let solved = chol.solve(&selector);
    let gram = selector.transpose() * solved;
    let det = gram[(0, 0)] * gram[(1, 1)] - gram[(0, 1)] * gram[(1, 0)];
    if !(det > 0.0) {
        return Err(InductanceError::IllConditioned {
            rcond: spd_rcond_estimate(matrix),
        });
    }
    let l1 = gram[(1, 1)] / det;
    let l2 = gram[(0, 0)] / det;
    let m = -0.5 * (gram[(0, 1)] + gram[(1, 0)]) / det;
    Ok((l1, l2, m))
}

/// Cheap reciprocal-condition estimate for a symmetric matrix from its
/// diagonal extremes; only used to annotate singular-system errors.
fn spd_rcond_estimate(matrix: &DMatrix<f64>) -> f64 {
    let n = matrix.nrows();
    let dmax = (0..n).map(|i| matrix[(i, i)]).fold(0.0_f64, f64::max);
    // Gershgorin-style lower bound on the smallest eigenvalue.
    let mut lower = f64::INFINITY;
    for i in 0..n {
        let off: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| matrix[(i, j)].abs())
            .sum();
        lower = lower.min(matrix[(i, i)] - off);
    }
    if dmax > 0.0 {
        (lower / dmax).max(0.0)
    } else {
        0.0
    }
}

/// Extract the inductance matrix and differential inductance of the CPS
/// pair. `_f0` is carried for interface parity with the reference workflow;
/// the lossless inductances are frequency-independent.
pub fn inductance_matrix(
    geom: &CpsGeometry,
    model: ConductorModel,
    _f0: f64,
    spec: &FilamentSpec,
) -> Result<InductanceResult, InductanceError> {
    spec.validate()?;
    inductance_matrix_at_thickness(geom, model, spec, geom.t_nb)
}

fn inductance_matrix_at_thickness(
    geom: &CpsGeometry,
    model: ConductorModel,
    spec: &FilamentSpec,
    t_metal: f64,
) -> Result<InductanceResult, InductanceError> {
    if !(t_metal > 0.0 && geom.width > 0.0 && geom.gap > 0.0 && geom.length > 0.0) {
        return Err(InductanceError::InvalidInput(
            "strip dimensions must be positive".into(),
        ));
    }
    if let ConductorModel::Superconducting { london_depth } = model {
        if !(london_depth > 0.0) {
            return Err(InductanceError::InvalidInput(
                "London depth must be positive".into(),
            ));
        }
    }
    let bars = build_filaments(geom, spec, t_metal);
    let matrix = assemble_matrix(&bars, model);
    let (l1, l2, m) = terminal_inductances(&matrix, bars.len() / 2)?;
    let l_eff = l1 + l2 - 2.0 * m;
    Ok(InductanceResult {
        l1,
        l2,
        m,
        l_eff,
        l_per_length: l_eff / geom.length,
    })
}

/// Kinetic-inductance fraction α = (L_sc − L_normal)/L_sc, from one run
/// without and one with the kinetic term. Positive and below one for any
/// physical λ; α → 0 as λ → 0.
pub fn kinetic_fraction(
    geom: &CpsGeometry,
    f0: f64,
    lambda_london: f64,
    spec: &FilamentSpec,
) -> Result<f64, InductanceError> {
    let normal = inductance_matrix(geom, ConductorModel::NormalLossless, f0, spec)?;
    let sc = inductance_matrix(
        geom,
        ConductorModel::Superconducting { london_depth: lambda_london },
        f0,
        spec,
    )?;
    Ok((sc.l_eff - normal.l_eff) / sc.l_eff)
}

/// Relative differential-inductance shift when the film thins by
/// `delta_t_nb`, using the identical filament topology for both runs so
/// discretization error cancels.
pub fn inductance_shift(
    geom: &CpsGeometry,
    delta_t_nb: f64,
    f0: f64,
    lambda_london: f64,
    spec: &FilamentSpec,
) -> Result<f64, InductanceError> {
    spec.validate()?;
    if delta_t_nb < 0.0 {
        return Err(InductanceError::InvalidInput(
            "metal consumption must be >= 0".into(),
        ));
    }
    if delta_t_nb >= geom.t_nb {
        return Err(InductanceError::InvalidInput(format!(
            "metal consumption {delta_t_nb:.3e} m exceeds the film thickness {:.3e} m",
            geom.t_nb
        )));
    }
    let model = ConductorModel::Superconducting { london_depth: lambda_london };
    let full = inductance_matrix_at_thickness(geom, model, spec, geom.t_nb)?;
    if delta_t_nb == 0.0 {
        return Ok(0.0);
    }
    let thinned = inductance_matrix_at_thickness(geom, model, spec, geom.t_nb - delta_t_nb)?;
    let _ = f0;
    Ok((thinned.l_eff - full.l_eff) / full.l_eff)
}

/// Convergence cross-check: refine the filament grid once and report both
/// differential inductances and their relative change.
pub fn refinement_check(
    geom: &CpsGeometry,
    model: ConductorModel,
    f0: f64,
    spec: &FilamentSpec,
) -> Result<(f64, f64, f64), InductanceError> {
    let coarse = inductance_matrix(geom, model, f0, spec)?;
    let fine = inductance_matrix(geom, model, f0, &spec.refined())?;
    let change = (coarse.l_eff - fine.l_eff).abs() / fine.l_eff;
    Ok((coarse.l_eff, fine.l_eff, change))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cps_geometry(gap: f64) -> CpsGeometry {
        CpsGeometry::bare(10e-6, gap, 5.8e-3, 145e-9, 10.0)
    }

    fn quick_spec() -> FilamentSpec {
        FilamentSpec { nx: 24, ny: 6, grading: 1.35 }
    }

    #[test]
    fn symmetric_strips_have_equal_self_inductance() {
        let result = inductance_matrix(
            &cps_geometry(10e-6),
            ConductorModel::NormalLossless,
            5e9,
            &quick_spec(),
        )
        .unwrap();
        assert_relative_eq!(result.l1, result.l2, max_relative = 1e-9);
        assert!(result.l_eff > 0.0);
        assert!(result.m.abs() < (result.l1 * result.l2).sqrt());
    }

    #[test]
    fn mutual_vanishes_at_far_separation() {
        // Partial mutual inductance of parallel bars decays only once the
        // separation exceeds the length as well, so the far limit is probed
        // with short strips: g = 100·w = 10·length.
        let mut geom = cps_geometry(100.0 * 10e-6);
        geom.length = 100e-6;
        let result = inductance_matrix(
            &geom,
            ConductorModel::NormalLossless,
            5e9,
            &quick_spec(),
        )
        .unwrap();
        assert!(
            result.m.abs() / result.l1 < 0.02,
            "M/L1 = {}",
            result.m.abs() / result.l1
        );
        // Far apart the differential inductance approaches L1 + L2.
        assert_relative_eq!(result.l_eff, result.l1 + result.l2, max_relative = 0.05);
        // Single-bar oracle: the solved mutual matches the coarse
        // two-bar estimate.
        let a = bars::Bar {
            x0: geom.gap / 2.0,
            x1: geom.gap / 2.0 + geom.width,
            y0: 0.0,
            y1: geom.t_nb,
            len: geom.length,
        };
        let b = bars::Bar { x0: -a.x1, x1: -a.x0, y0: a.y0, y1: a.y1, len: a.len };
        let coarse_m = bars::mutual_inductance(&a, &b);
        assert_relative_eq!(result.m, coarse_m, max_relative = 0.02);
    }

    #[test]
    fn kinetic_fraction_limits_and_monotonicity() {
        let geom = cps_geometry(10e-6);
        let spec = quick_spec();
        let tiny = kinetic_fraction(&geom, 5e9, 1e-12, &spec).unwrap();
        assert!(tiny.abs() < 1e-4, "alpha({}) at lambda -> 0", tiny);

        let mut previous = 0.0;
        for lambda_nm in [10.0, 30.0, 100.0] {
            let alpha = kinetic_fraction(&geom, 5e9, lambda_nm * 1e-9, &spec).unwrap();
            assert!(alpha > previous, "alpha not monotone at {lambda_nm} nm");
            previous = alpha;
        }
        assert!(previous < 1.0);
    }

    #[test]
    fn kinetic_fraction_against_thin_strip_estimate() {
        let geom = cps_geometry(10e-6);
        let lambda = 39e-9;
        let alpha = kinetic_fraction(&geom, 5e9, lambda, &FilamentSpec::default()).unwrap();
        assert!(alpha > 0.0 && alpha < 0.1, "alpha = {alpha}");

        // Uniform-current sheet estimate: L_k/ℓ = µ0·λ·coth(t/λ)/w per strip.
        let normal =
            inductance_matrix(&geom, ConductorModel::NormalLossless, 5e9, &FilamentSpec::default())
                .unwrap();
        let kinetic_per_length = 2.0 * VACUUM_PERMEABILITY * lambda
            / (geom.t_nb / lambda).tanh()
            / geom.width;
        let estimate = kinetic_per_length / (normal.l_per_length + kinetic_per_length);
        assert!(
            alpha / estimate > 0.5 && alpha / estimate < 2.0,
            "alpha {alpha} vs sheet estimate {estimate}"
        );
    }

    #[test]
    fn inductance_shift_is_zero_then_positive_and_small() {
        let geom = cps_geometry(46e-6);
        let spec = quick_spec();
        let zero = inductance_shift(&geom, 0.0, 5e9, 39e-9, &spec).unwrap();
        assert_eq!(zero, 0.0);

        let mut previous = 0.0;
        for delta_nm in [0.5, 1.0, 2.0] {
            let shift = inductance_shift(&geom, delta_nm * 1e-9, 5e9, 39e-9, &spec).unwrap();
            assert!(shift > previous, "shift {shift} at {delta_nm} nm");
            previous = shift;
        }
        // Stoichiometric consumption for 2.5 nm of oxide is ~0.9 nm of Nb;
        // the resulting shift is in the 1e-5..1e-4 band.
        let shift = inductance_shift(&geom, 0.93e-9, 5e9, 39e-9, &spec).unwrap();
        assert!(shift > 1e-5 && shift < 1e-3, "shift {shift}");
    }

    #[test]
    fn filament_refinement_converges() {
        let geom = cps_geometry(10e-6);
        let (_, _, change) = refinement_check(
            &geom,
            ConductorModel::Superconducting { london_depth: 39e-9 },
            5e9,
            &FilamentSpec::default(),
        )
        .unwrap();
        assert!(change < 0.005, "relative change {change}");
    }

    #[test]
    fn alpha_is_frequency_independent() {
        let geom = cps_geometry(46e-6);
        let spec = quick_spec();
        let a1 = kinetic_fraction(&geom, 4.5e9, 39e-9, &spec).unwrap();
        let a2 = kinetic_fraction(&geom, 6.0e9, 39e-9, &spec).unwrap();
        assert!((a1 - a2).abs() <= 1e-6 * a1.abs());
    }

    #[test]
    fn duplicate_filaments_are_reported_as_singular() {
        // Two identical filaments within one strip leave the current split
        // indeterminate: the partial-inductance matrix is singular.
        let bar = Bar { x0: 0.0, x1: 1e-6, y0: 0.0, y1: 1e-7, len: 1e-3 };
        let mirror = Bar { x0: -1e-6, x1: 0.0, ..bar };
        let bars = vec![bar, bar, mirror, mirror];
        let matrix = assemble_matrix(&bars, ConductorModel::NormalLossless);
        let result = terminal_inductances(&matrix, 2);
        assert!(matches!(result, Err(InductanceError::IllConditioned { .. })));
    }
}

/// Test hook: expose the assembled filament matrix for diagnostics.
#[doc(hidden)]
pub fn debug_assembled_matrix(
    geom: &CpsGeometry,
    model: ConductorModel,
    spec: &FilamentSpec,
) -> DMatrix<f64> {
    let bars = build_filaments(geom, spec, geom.t_nb);
    assemble_matrix(&bars, model)
}
