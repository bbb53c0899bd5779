//! Damped Gauss–Newton (Levenberg–Marquardt) minimizer for small dense
//! nonlinear least-squares problems.
//!
//! All fits in this crate are low-dimensional (4–6 parameters) with analytic
//! Jacobians, so a dense normal-equations implementation with Marquardt
//! scaling is the right tool. Convergence tolerances follow the conventions
//! used throughout the crate: relative step below `rel_step_tol` or relative
//! cost decrease below `rel_cost_tol`.

use nalgebra::{DMatrix, DVector};

/// A residual vector plus its Jacobian, both evaluated at a parameter point.
///
/// Implementations return `None` when the parameter point is outside the
/// model's domain (e.g. a non-positive quality factor); the minimizer treats
/// that as a rejected step.
pub trait LeastSquaresProblem {
    /// Residual vector r(p); the cost is |r|².
    fn residuals(&self, params: &DVector<f64>) -> Option<DVector<f64>>;
    /// Jacobian dr_i/dp_j at `params`, row-major over residuals.
    fn jacobian(&self, params: &DVector<f64>) -> Option<DMatrix<f64>>;
}

/// Fixed iteration limits and tolerances for the minimizer.
#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    /// Maximum number of accepted-or-rejected iterations.
    pub max_iterations: usize,
    /// Converged when max_i |δp_i|/(|p_i| + tiny) falls below this.
    pub rel_step_tol: f64,
    /// Converged when the relative cost decrease falls below this.
    pub rel_cost_tol: f64,
    /// Initial damping factor.
    pub lambda_init: f64,
    /// Damping multiplier on a rejected step.
    pub lambda_grow: f64,
    /// Damping divisor on an accepted step.
    pub lambda_shrink: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 200,
            rel_step_tol: 1e-10,
            rel_cost_tol: 1e-12,
            lambda_init: 1e-3,
            lambda_grow: 10.0,
            lambda_shrink: 10.0,
        }
    }
}

/// Output of the minimizer. `converged` is false when the iteration limit or
/// a damping blow-up stopped the search; the best point found is still
/// reported so callers can attach it to a convergence error.
#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: DVector<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    /// Parameter covariance s²(JᵀJ)⁻¹ with s² = cost/(m − n).
    /// Near-singular directions are floored, see [`covariance_from_jacobian`].
    pub covariance: DMatrix<f64>,
    /// RMS of the residual vector.
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// 2-norm condition number of JᵀJ at the optimum.
    pub normal_matrix_condition: f64,
}

/// Reasons the minimizer cannot even start.
#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("initial parameters are outside the model domain")]
    InvalidStart,
    #[error("fewer residuals ({residuals}) than parameters ({parameters})")]
    Underdetermined { residuals: usize, parameters: usize },
}

const LAMBDA_MAX: f64 = 1e12;
const LAMBDA_MIN: f64 = 1e-14;

/// Minimize |r(p)|² starting from `initial`.
pub fn levenberg_marquardt<P: LeastSquaresProblem>(
    problem: &P,
    initial: &DVector<f64>,
    config: &LmConfig,
) -> Result<LmFit, LmError> {
    let mut params = initial.clone();
    let mut residuals = problem
        .residuals(&params)
        .filter(|r| r.iter().all(|v| v.is_finite()))
        .ok_or(LmError::InvalidStart)?;
    let n = params.len();
    let m = residuals.len();
    if m < n {
        return Err(LmError::Underdetermined {
            residuals: m,
            parameters: n,
        });
    }

    let mut cost = residuals.norm_squared();
    let mut lambda = config.lambda_init;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let jacobian = match problem.jacobian(&params) {
            Some(j) if j.iter().all(|v| v.is_finite()) => j,
            _ => break,
        };
        let jtj = jacobian.transpose() * &jacobian;
        let jtr = jacobian.transpose() * &residuals;
        let diag_max = (0..n).map(|i| jtj[(i, i)]).fold(0.0_f64, f64::max);
        if diag_max <= 0.0 {
            // Zero Jacobian: already at a stationary point.
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            // Marquardt scaling: damp proportionally to diag(JᵀJ) so the
            // step is invariant under parameter rescaling.
            let mut damped = jtj.clone();
            for i in 0..n {
                let d = jtj[(i, i)].max(diag_max * 1e-12);
                damped[(i, i)] += lambda * d;
            }
            let step = match damped.cholesky() {
                Some(chol) => chol.solve(&(-&jtr)),
                None => {
                    lambda *= config.lambda_grow;
                    continue;
                }
            };
            let trial = &params + &step;
            let trial_residuals = problem
                .residuals(&trial)
                .filter(|r| r.iter().all(|v| v.is_finite()));
            let Some(trial_residuals) = trial_residuals else {
                lambda *= config.lambda_grow;
                continue;
            };
            let trial_cost = trial_residuals.norm_squared();
            if trial_cost <= cost {
                let rel_step = (0..n)
                    .map(|i| step[i].abs() / (params[i].abs() + 1e-300))
                    .fold(0.0_f64, f64::max);
                let rel_decrease = (cost - trial_cost) / cost.max(1e-300);
                params = trial;
                residuals = trial_residuals;
                cost = trial_cost;
                lambda = (lambda / config.lambda_shrink).max(LAMBDA_MIN);
                accepted = true;
                if rel_step < config.rel_step_tol || rel_decrease < config.rel_cost_tol {
                    converged = true;
                }
                break;
            }
            lambda *= config.lambda_grow;
        }
        if !accepted {
            // Damping exhausted without an acceptable step; the current
            // point is the best this search will produce.
            converged = converged || lambda > LAMBDA_MAX;
            break;
        }
        if converged {
            break;
        }
    }

    let jacobian = problem.jacobian(&params).unwrap_or_else(|| DMatrix::zeros(m, n));
    let (covariance, condition) = covariance_from_jacobian(&jacobian, cost, m, n);
    Ok(LmFit {
        params,
        cost,
        covariance,
        residual_rms: (cost / m as f64).sqrt(),
        iterations,
        converged,
        normal_matrix_condition: condition,
    })
}

/// Covariance s²(JᵀJ)⁻¹ via symmetric eigendecomposition, with eigenvalues
/// floored at 1e-14 of the largest so unidentifiable directions show up as
/// very large (but finite) variances instead of poisoning the whole matrix.
/// Also returns the condition number of JᵀJ.
pub fn covariance_from_jacobian(
    jacobian: &DMatrix<f64>,
    cost: f64,
    m: usize,
    n: usize,
) -> (DMatrix<f64>, f64) {
    let jtj = jacobian.transpose() * jacobian;
    let eig = jtj.symmetric_eigen();
    let eig_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if eig_max <= 0.0 {
        return (DMatrix::from_element(n, n, f64::INFINITY), f64::INFINITY);
    }
    let eig_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if eig_min > 0.0 { eig_max / eig_min } else { f64::INFINITY };
    let dof = (m.saturating_sub(n)).max(1) as f64;
    let s2 = cost / dof;
    let mut cov = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(eig_max * 1e-14);
        let v = eig.eigenvectors.column(k);
        cov += (s2 / lam) * &v * v.transpose();
    }
    (cov, condition)
}

/// Central finite-difference Jacobian, used by the gradient-check tests as
/// the independent reference for analytic Jacobians.
pub fn finite_difference_jacobian<F>(
    f: &F,
    params: &DVector<f64>,
    m: usize,
) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = params.len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let h = 1e-6 * params[j].abs().max(1e-12);
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus[j] += h;
        minus[j] -= h;
        let df = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.set_column(j, &df);
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// y = a·exp(-b·x) sampled on a fixed grid.
    struct ExpDecay {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem for ExpDecay {
        fn residuals(&self, p: &DVector<f64>) -> Option<DVector<f64>> {
            if p[1] < 0.0 {
                return None;
            }
            Some(DVector::from_iterator(
                self.x.len(),
                self.x
                    .iter()
                    .zip(&self.y)
                    .map(|(&x, &y)| p[0] * (-p[1] * x).exp() - y),
            ))
        }

        fn jacobian(&self, p: &DVector<f64>) -> Option<DMatrix<f64>> {
            let mut j = DMatrix::zeros(self.x.len(), 2);
            for (i, &x) in self.x.iter().enumerate() {
                let e = (-p[1] * x).exp();
                j[(i, 0)] = e;
                j[(i, 1)] = -p[0] * x * e;
            }
            Some(j)
        }
    }

    #[test]
    fn recovers_exponential_parameters() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&x| 2.5 * (-1.3_f64 * x).exp()).collect();
        let problem = ExpDecay { x, y };
        let fit = levenberg_marquardt(
            &problem,
            &DVector::from_vec(vec![1.0, 0.5]),
            &LmConfig::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.params[0], 2.5, max_relative = 1e-8);
        assert_relative_eq!(fit.params[1], 1.3, max_relative = 1e-8);
        assert!(fit.cost < 1e-20);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let y = vec![0.0; 10];
        let problem = ExpDecay { x, y };
        let p = DVector::from_vec(vec![1.7, 0.8]);
        let analytic = problem.jacobian(&p).unwrap();
        let numeric =
            finite_difference_jacobian(&|q| problem.residuals(q).unwrap(), &p, 10);
        for (a, b) in analytic.iter().zip(numeric.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-6, epsilon = 1e-12);
        }
    }

    #[test]
    fn underdetermined_is_rejected() {
        let problem = ExpDecay {
            x: vec![1.0],
            y: vec![1.0],
        };
        let err = levenberg_marquardt(
            &problem,
            &DVector::from_vec(vec![1.0, 1.0]),
            &LmConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LmError::Underdetermined { .. }));
    }

    #[test]
    fn covariance_flags_unidentifiable_direction() {
        // Jacobian with a numerically dead second column.
        let mut j = DMatrix::zeros(6, 2);
        for i in 0..6 {
            j[(i, 0)] = 1.0;
            j[(i, 1)] = 1e-12;
        }
        let (cov, cond) = covariance_from_jacobian(&j, 1e-4, 6, 2);
        assert!(cond > 1e12);
        assert!(cov[(1, 1)] > 1e6 * cov[(0, 0)]);
    }
}
