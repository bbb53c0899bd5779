//! The six pipeline commands behind the CLI: fit, sweep, simulate,
//! regrowth, budget and report.
//!
//! Every command writes JSON run reports (and tidy plot CSVs where useful)
//! into the output directory; the consolidated `report` command reads those
//! back, so the pipeline stages can run in separate invocations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::csvio;
use super::{CliError, DeviceConfig, ErrorKind, GeometryFile, ProjectConfig, RunReport};
use crate::constants::dbm_to_watts;
use crate::field_solver::{self, GridSpec};
use crate::inductance_solver::{self, ConductorModel};
use crate::loss_budget::{self, BudgetMethod, BudgetSystem, SkinEffectLaw};
use crate::regrowth::{self, FrequencyShiftModel, ShiftCurve, StoichiometryModel};
use crate::tls_model;
use crate::trace_fit;

/// Shared command context.
pub struct CommandContext {
    pub config: ProjectConfig,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: usize,
}

impl CommandContext {
    pub fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::from_io("creating output directory", e))
    }

    fn report_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn device(&self, name: &str) -> Result<&DeviceConfig, CliError> {
        self.config.devices.get(name).ok_or_else(|| {
            CliError::precondition(format!("device '{name}' is not defined in the configuration"))
        })
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutputs {
    pub trace_file: String,
    pub f0_hz: f64,
    pub q_int: f64,
    pub q_ext: f64,
    pub q_loaded: f64,
    pub baseline_mag: f64,
    pub phase_offset_rad: f64,
    pub electrical_delay_s: f64,
    /// 1σ uncertainties in parameter order (f0, q_int, q_ext, C, φ0, t_ed).
    pub sigmas: [f64; 6],
    pub residual_rms: f64,
    /// Photon number when power metadata was present.
    pub photon_number: Option<f64>,
    pub applied_power_w: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitBatchEntry {
    pub trace_file: String,
    pub status: String,
    pub report: Option<String>,
    pub error: Option<String>,
}

/// Fit a batch of reflection traces. Failures are recorded per file without
/// aborting the batch; the returned kind (if any) drives the exit code.
pub fn cmd_fit(ctx: &CommandContext, traces: &[PathBuf]) -> Result<Option<ErrorKind>, CliError> {
    if traces.is_empty() {
        return Err(CliError::precondition("no trace files given"));
    }
    ctx.prepare()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs.max(1))
        .build()
        .map_err(|e| CliError::precondition(format!("thread pool: {e}")))?;

    let lm = ctx.config.lm_config();
    let attenuation = ctx.config.calibration.line_attenuation_db;
    let results: Vec<(PathBuf, Result<FitOutputs, CliError>)> = pool.install(|| {
        use rayon::prelude::*;
        traces
            .par_iter()
            .map(|path| (path.clone(), fit_one(path, attenuation, &lm)))
            .collect()
    });

    let mut entries = Vec::new();
    let mut worst: Option<ErrorKind> = None;
    for (path, result) in results {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".into());
        match result {
            Ok(outputs) => {
                let mut report = RunReport::new("fit", ctx.seed, outputs);
                report.digest_input(&path)?;
                let sidecar = path.with_extension("toml");
                if sidecar.exists() {
                    report.digest_input(&sidecar)?;
                }
                let name = format!("fit_{stem}.json");
                report.write(&ctx.report_path(&name))?;
                entries.push(FitBatchEntry {
                    trace_file: path.display().to_string(),
                    status: "ok".into(),
                    report: Some(name),
                    error: None,
                });
            }
            Err(err) => {
                worst = Some(match worst {
                    Some(prev) if prev.exit_code() <= err.kind.exit_code() => prev,
                    _ => err.kind,
                });
                entries.push(FitBatchEntry {
                    trace_file: path.display().to_string(),
                    status: "error".into(),
                    report: None,
                    error: Some(err.message.clone()),
                });
            }
        }
    }
    let mut summary = RunReport::new("fit", ctx.seed, entries);
    summary.digest_input(&ctx.config_path)?;
    summary.write(&ctx.report_path("fit_summary.json"))?;
    Ok(worst)
}

fn fit_one(
    path: &Path,
    default_attenuation_db: f64,
    lm: &crate::optim::LmConfig,
) -> Result<FitOutputs, CliError> {
    let (trace, metadata) = csvio::read_trace(path, default_attenuation_db)?;
    let fit = trace_fit::fit_resonance_with(&trace, None, lm)?;
    let (photon, power) = match &metadata {
        Some(meta) => {
            let attenuation = meta.line_attenuation_db.unwrap_or(default_attenuation_db);
            let power = dbm_to_watts(meta.applied_power_dbm - attenuation);
            let estimate = trace_fit::photon_number(&fit, power)?;
            (Some(estimate.n_mean), Some(power))
        }
        None => (None, None),
    };
    Ok(FitOutputs {
        trace_file: path.display().to_string(),
        f0_hz: fit.f0,
        q_int: fit.q_int,
        q_ext: fit.q_ext,
        q_loaded: fit.q_loaded(),
        baseline_mag: fit.baseline_mag,
        phase_offset_rad: fit.phase_offset,
        electrical_delay_s: fit.electrical_delay,
        sigmas: fit.sigmas(),
        residual_rms: fit.residual_rms,
        photon_number: photon,
        applied_power_w: power,
    })
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Power,
    Temperature,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerSweepOutputs {
    pub f0_hz: f64,
    pub temperature_k: f64,
    pub f_tls_tan_delta: f64,
    pub n_c: f64,
    pub beta_pow: f64,
    pub q_r: f64,
    pub sigmas: [f64; 4],
    pub residual_rms: f64,
    pub degenerate: bool,
    pub low_power_q_int: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemperatureSweepOutputs {
    pub f0_hz: f64,
    /// Saturated TLS loss amplitude A of 1/Q = A·tanh(ħω/2kT) + 1/Q_r,
    /// read as F_TLS·tanδ_TLS at low power.
    pub f_tls_tan_delta: f64,
    pub f_tls_tan_delta_sigma: f64,
    /// 1/A, the paper-style headline number.
    pub inverse_f_tls_tan_delta: f64,
    pub q_r: f64,
    pub q_r_sigma: f64,
    pub residual_rms: f64,
}

pub fn cmd_sweep(ctx: &CommandContext, path: &Path, kind: SweepKind) -> Result<(), CliError> {
    ctx.prepare()?;
    let metadata = csvio::read_sweep_metadata(path)?;
    match kind {
        SweepKind::Power => {
            let (points, warning) = csvio::read_power_sweep(path)?;
            let temperature = metadata.temperature_k.ok_or_else(|| {
                CliError::precondition("power sweep sidecar must set temperature_k")
            })?;
            let fit = tls_model::fit_power_sweep(&points, metadata.f0_hz, temperature)?;
            let low_power = tls_model::low_power_q(
                &points.iter().map(|p| (p.n_photon, p.q_int)).collect::<Vec<_>>(),
                fit.params.n_c,
            )
            .ok();
            let outputs = PowerSweepOutputs {
                f0_hz: metadata.f0_hz,
                temperature_k: temperature,
                f_tls_tan_delta: fit.params.f_tls_tan_delta,
                n_c: fit.params.n_c,
                beta_pow: fit.params.beta_pow,
                q_r: fit.params.q_r,
                sigmas: fit.sigmas(),
                residual_rms: fit.residual_rms,
                degenerate: fit.degenerate,
                low_power_q_int: low_power,
            };
            let mut report = RunReport::new("sweep-power", ctx.seed, outputs);
            if let Some(w) = warning {
                report.warnings.push(w);
            }
            if fit.degenerate {
                report
                    .warnings
                    .push("saturation scale unidentifiable: n_c is unconstrained".into());
            }
            report.digest_input(path)?;
            report.write(&ctx.report_path("sweep_power.json"))?;

            // Tidy data + fitted curve for plotting.
            let mut rows = Vec::new();
            for p in &points {
                let model = 1.0
                    / tls_model::tls_inverse_q(&fit.params, p.n_photon, temperature, metadata.f0_hz)
                        .map_err(CliError::from)?;
                rows.push(vec![
                    format!("{:e}", p.n_photon),
                    format!("{:e}", p.q_int),
                    format!("{:e}", model),
                ]);
            }
            csvio::write_tidy_csv(
                &ctx.report_path("sweep_power_curve.csv"),
                &["n_photon", "q_int_data", "q_int_fit"],
                &rows,
            )
        }
        SweepKind::Temperature => {
            let (points, warning) = csvio::read_temperature_sweep(path)?;
            let fit = tls_model::fit_temperature_sweep(&points, metadata.f0_hz)?;
            let outputs = TemperatureSweepOutputs {
                f0_hz: metadata.f0_hz,
                f_tls_tan_delta: fit.saturated_tls_loss,
                f_tls_tan_delta_sigma: fit.sigma_amplitude(),
                inverse_f_tls_tan_delta: 1.0 / fit.saturated_tls_loss,
                q_r: fit.q_r,
                q_r_sigma: fit.sigma_q_r(),
                residual_rms: fit.residual_rms,
            };
            let mut report = RunReport::new("sweep-temperature", ctx.seed, outputs);
            if let Some(w) = warning {
                report.warnings.push(w);
            }
            if fit.q_r < 0.0 {
                report
                    .warnings
                    .push("fitted residual loss is negative: Q_r is unphysical".into());
            }
            report.digest_input(path)?;
            report.write(&ctx.report_path("sweep_temperature.json"))?;

            let mut rows = Vec::new();
            for p in &points {
                let model = 1.0
                    / (fit.saturated_tls_loss
                        * tls_model::tanh_factor(metadata.f0_hz, p.temperature_k)
                        + 1.0 / fit.q_r);
                rows.push(vec![
                    format!("{:e}", p.temperature_k),
                    format!("{:e}", p.q_intr),
                    format!("{:e}", model),
                ]);
            }
            csvio::write_tidy_csv(
                &ctx.report_path("sweep_temperature_curve.csv"),
                &["temperature_k", "q_intr_data", "q_intr_fit"],
                &rows,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulateWhat {
    Participation,
    Inductance,
    RegrowthCurve,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticipationOutputs {
    pub device: String,
    pub p_tilde_ma: f64,
    pub p_tilde_ms: f64,
    pub p_tilde_sa: f64,
    pub p_tilde_c: f64,
    /// Corner-absorbed effective values used by the bounds.
    pub p_tilde_ma_eff: f64,
    pub p_tilde_ms_eff: f64,
    pub capacitance_f_per_m: f64,
    pub layer_thickness_nm: f64,
    pub linearity_deviation: f64,
    pub mesh_nodes: usize,
    /// (coarse C, fine C, relative change) when the refinement check ran.
    pub refinement: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InductanceOutputs {
    pub device: String,
    pub l1_h: f64,
    pub l2_h: f64,
    pub m_h: f64,
    pub l_eff_h: f64,
    pub l_per_length_h_per_m: f64,
    pub kinetic_fraction: f64,
    pub lambda_london_nm: f64,
    /// (coarse L_eff, fine L_eff, relative change).
    pub refinement: (f64, f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegrowthCurveOutputs {
    pub device: String,
    pub delta_t_ma_nm: Vec<f64>,
    pub fractional_shift: Vec<f64>,
}

/// Resolve the devices to simulate: explicit geometry files (stem = name) or
/// every configured device when none are given.
fn resolve_devices(
    ctx: &CommandContext,
    files: &[PathBuf],
) -> Result<Vec<(String, GeometryFile, Option<f64>)>, CliError> {
    if files.is_empty() {
        if ctx.config.devices.is_empty() {
            return Err(CliError::precondition(
                "no geometry files given and no devices configured",
            ));
        }
        let mut out = Vec::new();
        for (name, device) in &ctx.config.devices {
            out.push((
                name.clone(),
                GeometryFile::load(&device.geometry)?,
                Some(device.f0_hz),
            ));
        }
        Ok(out)
    } else {
        files
            .iter()
            .map(|path| {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "device".into());
                let f0 = ctx.config.devices.get(&name).map(|d| d.f0_hz);
                Ok((name, GeometryFile::load(path)?, f0))
            })
            .collect()
    }
}

pub fn cmd_simulate(
    ctx: &CommandContext,
    what: SimulateWhat,
    files: &[PathBuf],
) -> Result<(), CliError> {
    ctx.prepare()?;
    let devices = resolve_devices(ctx, files)?;
    for (name, geometry_file, f0) in devices {
        let geom = geometry_file.to_geometry()?;
        match what {
            SimulateWhat::Participation => {
                let grid = ctx.config.field_grid.to_grid();
                let report_data = field_solver::participation_ratios(&geom, &grid)?;
                let set = report_data.set;
                let outputs = ParticipationOutputs {
                    device: name.clone(),
                    p_tilde_ma: set.p_tilde_ma,
                    p_tilde_ms: set.p_tilde_ms,
                    p_tilde_sa: set.p_tilde_sa,
                    p_tilde_c: set.p_tilde_c,
                    p_tilde_ma_eff: set.p_tilde_ma + set.p_tilde_c / 2.0,
                    p_tilde_ms_eff: set.p_tilde_ms + set.p_tilde_c / 2.0,
                    capacitance_f_per_m: report_data.capacitance,
                    layer_thickness_nm: report_data.layer_thickness * 1e9,
                    linearity_deviation: report_data.linearity_deviation,
                    mesh_nodes: report_data.mesh_nodes,
                    refinement: report_data.refinement,
                };
                let mut report = RunReport::new("simulate-participation", ctx.seed, outputs);
                report.digest_input(&ctx.config_path)?;
                report.write(&ctx.report_path(&format!("participation_{name}.json")))?;
            }
            SimulateWhat::Inductance => {
                let spec = filament_spec_for(&ctx.config, &geometry_file);
                let lambda = geometry_file
                    .lambda_nm
                    .map(|nm| nm * 1e-9)
                    .unwrap_or(ctx.config.material.london_depth_nm * 1e-9);
                let f0 = f0.unwrap_or(5e9);
                let sc = inductance_solver::inductance_matrix(
                    &geom,
                    ConductorModel::Superconducting { london_depth: lambda },
                    f0,
                    &spec,
                )?;
                let alpha = inductance_solver::kinetic_fraction(&geom, f0, lambda, &spec)?;
                let refinement = inductance_solver::refinement_check(
                    &geom,
                    ConductorModel::Superconducting { london_depth: lambda },
                    f0,
                    &spec,
                )?;
                let outputs = InductanceOutputs {
                    device: name.clone(),
                    l1_h: sc.l1,
                    l2_h: sc.l2,
                    m_h: sc.m,
                    l_eff_h: sc.l_eff,
                    l_per_length_h_per_m: sc.l_per_length,
                    kinetic_fraction: alpha,
                    lambda_london_nm: lambda * 1e9,
                    refinement,
                };
                let mut report = RunReport::new("simulate-inductance", ctx.seed, outputs);
                report.digest_input(&ctx.config_path)?;
                report.write(&ctx.report_path(&format!("inductance_{name}.json")))?;
            }
            SimulateWhat::RegrowthCurve => {
                let model = shift_model(ctx, &geometry_file, f0)?;
                let thicknesses: Vec<f64> = ctx
                    .config
                    .regrowth
                    .curve_thicknesses_nm
                    .iter()
                    .map(|nm| nm * 1e-9)
                    .collect();
                let curve = ShiftCurve::sample(&model, &thicknesses).map_err(CliError::from)?;
                let outputs = RegrowthCurveOutputs {
                    device: name.clone(),
                    delta_t_ma_nm: curve.delta_t_ma.iter().map(|t| t * 1e9).collect(),
                    fractional_shift: curve.shift.clone(),
                };
                let mut report = RunReport::new("simulate-regrowth-curve", ctx.seed, outputs);
                report.digest_input(&ctx.config_path)?;
                report.write(&ctx.report_path(&format!("regrowth_curve_{name}.json")))?;
                let rows: Vec<Vec<String>> = curve
                    .delta_t_ma
                    .iter()
                    .zip(&curve.shift)
                    .map(|(t, s)| vec![format!("{:e}", t * 1e9), format!("{:e}", s)])
                    .collect();
                csvio::write_tidy_csv(
                    &ctx.report_path(&format!("regrowth_curve_{name}.csv")),
                    &["delta_t_ma_nm", "fractional_shift"],
                    &rows,
                )?;
            }
        }
    }
    Ok(())
}

fn filament_spec_for(
    config: &ProjectConfig,
    geometry_file: &GeometryFile,
) -> inductance_solver::FilamentSpec {
    let mut spec = config.filaments.to_spec();
    if let Some(nx) = geometry_file.filament_nx {
        spec.nx = nx;
    }
    if let Some(ny) = geometry_file.filament_ny {
        spec.ny = ny;
    }
    spec
}

fn shift_model(
    ctx: &CommandContext,
    geometry_file: &GeometryFile,
    f0: Option<f64>,
) -> Result<FrequencyShiftModel, CliError> {
    let stoichiometry =
        StoichiometryModel::from_constants(&ctx.config.material.to_constants())
            .map_err(CliError::from)?;
    Ok(FrequencyShiftModel {
        geom: geometry_file.to_geometry()?,
        field_grid: GridSpec::shift(),
        filament_spec: filament_spec_for(&ctx.config, geometry_file),
        stoichiometry,
        lambda_london: geometry_file
            .lambda_nm
            .map(|nm| nm * 1e-9)
            .unwrap_or(ctx.config.material.london_depth_nm * 1e-9),
        f0: f0.unwrap_or(5e9),
    })
}

// ---------------------------------------------------------------------------
// regrowth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegrowthOutputs {
    pub delta_t_ma_nm: f64,
    pub delta_t_ma_sigma_nm: f64,
    pub residual_rms: f64,
    /// Per device: (measured Δf/f, modeled Δf/f at the optimum).
    pub per_device_shift: Vec<(String, f64, f64)>,
    /// Per device: (tanδ_MA, negative-value warning).
    pub tan_delta_ma_per_device: Vec<(String, f64, bool)>,
    pub tan_delta_ma_average: f64,
    pub tan_delta_ma_std_error: f64,
    /// Literature growth-kinetics benchmark, echoed for context only.
    pub literature_benchmark: String,
}

pub fn cmd_regrowth(ctx: &CommandContext, observations_path: &Path) -> Result<(), CliError> {
    ctx.prepare()?;
    let mut observations = csvio::read_observations(observations_path)?;
    if observations.is_empty() {
        return Err(CliError::precondition("no observations in input"));
    }

    // Per-device participation (for p̃_MA,eff) and forward shift curves.
    let mut curves: BTreeMap<String, ShiftCurve> = BTreeMap::new();
    let mut participation_grid = ctx.config.field_grid.to_grid();
    participation_grid.refine_check = false;
    let thicknesses: Vec<f64> = ctx
        .config
        .regrowth
        .curve_thicknesses_nm
        .iter()
        .map(|nm| nm * 1e-9)
        .collect();
    for obs in &mut observations {
        let device = ctx.device(&obs.device_id)?;
        let geometry_file = GeometryFile::load(&device.geometry)?;
        let geom = geometry_file.to_geometry()?;
        let participation = field_solver::participation_ratios(&geom, &participation_grid)?;
        obs.p_tilde_ma_eff =
            participation.set.p_tilde_ma + participation.set.p_tilde_c / 2.0;
        let model = shift_model(ctx, &geometry_file, Some(device.f0_hz))?;
        curves.insert(
            obs.device_id.clone(),
            ShiftCurve::sample(&model, &thicknesses).map_err(CliError::from)?,
        );
    }

    let estimate = regrowth::invert_thickness(&observations, &curves).map_err(CliError::from)?;
    let extraction =
        regrowth::extract_ma_loss_tangent(&observations, estimate.delta_t_ma)
            .map_err(CliError::from)?;

    let mut warnings = Vec::new();
    for obs in &observations {
        warnings.extend(obs.validate().map_err(CliError::from)?);
    }
    for (device, _, negative) in &extraction.per_device {
        if *negative {
            warnings.push(format!("device {device}: negative extracted loss tangent"));
        }
    }

    let outputs = RegrowthOutputs {
        delta_t_ma_nm: estimate.delta_t_ma * 1e9,
        delta_t_ma_sigma_nm: estimate.sigma * 1e9,
        residual_rms: estimate.residual_rms,
        per_device_shift: estimate.per_device.clone(),
        tan_delta_ma_per_device: extraction.per_device.clone(),
        tan_delta_ma_average: extraction.average,
        tan_delta_ma_std_error: extraction.std_error,
        literature_benchmark:
            "reported growth kinetics predict ~1.8 nm of Nb2O5 after 8 days in air".into(),
    };
    let mut report = RunReport::new("regrowth", ctx.seed, outputs);
    report.warnings = warnings;
    report.digest_input(observations_path)?;
    report.digest_input(&ctx.config_path)?;
    report.write(&ctx.report_path("regrowth.json"))
}

// ---------------------------------------------------------------------------
// budget
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetOutputs {
    pub condition_number: f64,
    pub collinearity_warning: bool,
    pub collinearity_threshold: f64,
    /// Direct least-squares solution: MA/MS/SA products (nm) and n_qp (µm⁻³).
    pub direct_products_nm: [f64; 3],
    pub direct_n_qp: f64,
    pub direct_residual_norm: f64,
    /// Nonnegative solution.
    pub nonnegative_products_nm: [f64; 3],
    pub nonnegative_n_qp: f64,
    pub nonnegative_residual_norm: f64,
}

pub fn cmd_budget(ctx: &CommandContext, budget_path: &Path) -> Result<(), CliError> {
    ctx.prepare()?;
    let rows = csvio::read_budget_rows(budget_path)?;
    let mut system = BudgetSystem::new(rows);
    system.collinearity_threshold = ctx.config.budget.collinearity_threshold;
    let direct = loss_budget::solve_budget(&system, BudgetMethod::Direct)?;
    let nonnegative = loss_budget::solve_budget(&system, BudgetMethod::Nonnegative)?;
    let outputs = BudgetOutputs {
        condition_number: direct.condition_number,
        collinearity_warning: direct.collinearity_warning,
        collinearity_threshold: system.collinearity_threshold,
        direct_products_nm: direct.interface_products_nm,
        direct_n_qp: direct.n_qp,
        direct_residual_norm: direct.residual_norm,
        nonnegative_products_nm: nonnegative.interface_products_nm,
        nonnegative_n_qp: nonnegative.n_qp,
        nonnegative_residual_norm: nonnegative.residual_norm,
    };
    let mut report = RunReport::new("budget", ctx.seed, outputs);
    if direct.collinearity_warning {
        report.warnings.push(format!(
            "participation columns are nearly collinear (condition number {:.3e} > {:.1e}): the direct inversion is unreliable",
            direct.condition_number, system.collinearity_threshold
        ));
    }
    report.digest_input(budget_path)?;
    report.digest_input(&ctx.config_path)?;
    report.write(&ctx.report_path("budget.json"))
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRow {
    pub interface: String,
    pub p_tilde_eff: f64,
    pub bound_nm: f64,
    pub sigma_nm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableRow {
    pub device: String,
    pub q_intr: f64,
    pub q_extr_applied: Option<f64>,
    pub q_int_reconstructed: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsolidatedOutputs {
    /// 1σ convention: every quoted uncertainty in this report is one
    /// standard deviation.
    pub uncertainty_convention: String,
    pub f_tls_tan_delta: f64,
    pub inverse_f_tls_tan_delta: f64,
    pub q_r: f64,
    pub bounds: Vec<BoundRow>,
    pub quasiparticle_bound_per_um3: f64,
    pub quasiparticle_sigma_per_um3: f64,
    pub quasiparticle_device: String,
    pub kinetic_fraction: f64,
    /// Externally sourced material constants echoed for provenance.
    pub material_constants: super::MaterialConfig,
    pub q_extr_law: String,
    pub q_table: Vec<QTableRow>,
    pub regrowth_delta_t_ma_nm: f64,
    pub regrowth_tan_delta_ma: f64,
    pub regrowth_tan_delta_ma_std_error: f64,
    pub budget_condition_number: f64,
    pub budget_collinearity_warning: bool,
}

pub fn cmd_report(ctx: &CommandContext) -> Result<(), CliError> {
    ctx.prepare()?;
    let missing = |stage: &str, file: &str| {
        CliError::dependency(format!(
            "stage '{stage}' has not run: {file} not found in {}",
            ctx.out_dir.display()
        ))
    };

    let sweep_path = ctx.report_path("sweep_temperature.json");
    if !sweep_path.exists() {
        return Err(missing("sweep temperature", "sweep_temperature.json"));
    }
    let sweep: RunReport<TemperatureSweepOutputs> = super::read_report(&sweep_path)?;

    let mut participations = BTreeMap::new();
    for name in ctx.config.devices.keys() {
        let path = ctx.report_path(&format!("participation_{name}.json"));
        if !path.exists() {
            return Err(missing("simulate participation", &format!("participation_{name}.json")));
        }
        let report: RunReport<ParticipationOutputs> = super::read_report(&path)?;
        participations.insert(name.clone(), report.outputs);
    }

    let qp_device = ctx
        .config
        .temperature_sweep_device
        .clone()
        .or_else(|| ctx.config.devices.keys().next().cloned())
        .ok_or_else(|| CliError::precondition("no devices configured"))?;
    let inductance_path = ctx.report_path(&format!("inductance_{qp_device}.json"));
    if !inductance_path.exists() {
        return Err(missing("simulate inductance", &format!("inductance_{qp_device}.json")));
    }
    let inductance: RunReport<InductanceOutputs> = super::read_report(&inductance_path)?;

    let regrowth_path = ctx.report_path("regrowth.json");
    if !regrowth_path.exists() {
        return Err(missing("regrowth", "regrowth.json"));
    }
    let regrowth_report: RunReport<RegrowthOutputs> = super::read_report(&regrowth_path)?;

    let budget_path = ctx.report_path("budget.json");
    if !budget_path.exists() {
        return Err(missing("budget", "budget.json"));
    }
    let budget_report: RunReport<BudgetOutputs> = super::read_report(&budget_path)?;

    // Bounds for the device measured in the temperature sweep.
    let participation = participations.get(&qp_device).ok_or_else(|| {
        CliError::dependency(format!("no participation report for device {qp_device}"))
    })?;
    let f_tls = sweep.outputs.f_tls_tan_delta;
    let sigma_rel = if f_tls != 0.0 {
        sweep.outputs.f_tls_tan_delta_sigma / f_tls
    } else {
        0.0
    };
    let mut bounds = Vec::new();
    for (interface, p_eff) in [
        ("MA (including half corner)", participation.p_tilde_ma_eff),
        ("MS (including half corner)", participation.p_tilde_ms_eff),
        ("SA", participation.p_tilde_sa),
    ] {
        let bound = tls_model::interface_bound(f_tls, p_eff).map_err(CliError::from)?;
        bounds.push(BoundRow {
            interface: interface.into(),
            p_tilde_eff: p_eff,
            bound_nm: bound,
            sigma_nm: bound * sigma_rel,
        });
    }

    let constants = ctx.config.material.to_constants();
    let device_f0 = ctx.device(&qp_device)?.f0_hz;
    let n_qp = tls_model::quasiparticle_bound(
        sweep.outputs.q_r,
        inductance.outputs.kinetic_fraction,
        device_f0,
        &constants,
    )
    .map_err(CliError::from)?;
    let qr_sigma_rel = if sweep.outputs.q_r != 0.0 {
        sweep.outputs.q_r_sigma / sweep.outputs.q_r
    } else {
        0.0
    };

    // Table of quality factors reconstructed from the budget inputs plus the
    // configured extrinsic model.
    let law = ctx.config.budget.law()?;
    let omega_cavity = 2.0 * std::f64::consts::PI * ctx.config.calibration.f_cavity_hz;
    let budget_rows = csvio::read_budget_rows(&find_budget_input(&budget_report)?)
        .unwrap_or_default();
    let mut q_table = Vec::new();
    for row in &budget_rows {
        let device = ctx.config.devices.get(&row.device_id);
        let q_extr = match (device.and_then(|d| d.q_extr_classical), law) {
            (Some(q_cl), Some(SkinEffectLaw::Anomalous)) => {
                let omega_r = 2.0 * std::f64::consts::PI
                    * device.map(|d| d.f0_hz).unwrap_or(ctx.config.calibration.f_cavity_hz);
                Some(loss_budget::ase_correct(q_cl, omega_cavity, omega_r)?)
            }
            (Some(q_cl), Some(SkinEffectLaw::Classical)) | (Some(q_cl), None) => Some(q_cl),
            (None, _) => None,
        };
        let q_intr = 1.0 / row.intrinsic_loss;
        let q_int = q_extr.map(|qe| 1.0 / (1.0 / q_intr + 1.0 / qe));
        q_table.push(QTableRow {
            device: row.device_id.clone(),
            q_intr,
            q_extr_applied: q_extr,
            q_int_reconstructed: q_int,
        });
    }

    let outputs = ConsolidatedOutputs {
        uncertainty_convention: "all quoted uncertainties are 1 sigma".into(),
        f_tls_tan_delta: f_tls,
        inverse_f_tls_tan_delta: 1.0 / f_tls,
        q_r: sweep.outputs.q_r,
        bounds,
        quasiparticle_bound_per_um3: n_qp,
        quasiparticle_sigma_per_um3: n_qp * qr_sigma_rel,
        quasiparticle_device: qp_device.clone(),
        kinetic_fraction: inductance.outputs.kinetic_fraction,
        material_constants: ctx.config.material.clone(),
        q_extr_law: ctx.config.budget.q_extr_law.clone(),
        q_table,
        regrowth_delta_t_ma_nm: regrowth_report.outputs.delta_t_ma_nm,
        regrowth_tan_delta_ma: regrowth_report.outputs.tan_delta_ma_average,
        regrowth_tan_delta_ma_std_error: regrowth_report.outputs.tan_delta_ma_std_error,
        budget_condition_number: budget_report.outputs.condition_number,
        budget_collinearity_warning: budget_report.outputs.collinearity_warning,
    };

    let mut report = RunReport::new("report", ctx.seed, outputs);
    report.warnings.push(
        "Nb gap energy and D(E_F) defaults are externally sourced literature values".into(),
    );
    for path in [&sweep_path, &inductance_path, &regrowth_path, &budget_path] {
        report.digest_input(path)?;
    }
    report.write(&ctx.report_path("report.json"))?;
    write_text_report(&ctx.report_path("report.txt"), &report.outputs)
}

fn find_budget_input<T>(report: &RunReport<T>) -> Result<PathBuf, CliError> {
    report
        .input_digests
        .keys()
        .find(|k| k.ends_with(".csv"))
        .map(PathBuf::from)
        .ok_or_else(|| CliError::dependency("budget report does not record its CSV input"))
}

fn write_text_report(path: &Path, outputs: &ConsolidatedOutputs) -> Result<(), CliError> {
    use std::fmt::Write as _;
    let mut text = String::new();
    let _ = writeln!(text, "CPS resonator loss analysis ({})", outputs.uncertainty_convention);
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "TLS: 1/(F.tan_delta) = {:.3e}   Q_r = {:.3e}",
        outputs.inverse_f_tls_tan_delta, outputs.q_r
    );
    let _ = writeln!(text);
    let _ = writeln!(text, "Interface loss upper bounds (x1e-3 nm):");
    for row in &outputs.bounds {
        let _ = writeln!(
            text,
            "  {:<28} p_eff = {:>7.1} ppm/nm   t.tan_delta <= {:.1} +/- {:.1}",
            row.interface,
            row.p_tilde_eff,
            row.bound_nm * 1e3,
            row.sigma_nm * 1e3
        );
    }
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "Quasiparticle bound ({}): n_qp <= {:.0} +/- {:.0} per um^3 (alpha = {:.4})",
        outputs.quasiparticle_device,
        outputs.quasiparticle_bound_per_um3,
        outputs.quasiparticle_sigma_per_um3,
        outputs.kinetic_fraction
    );
    let _ = writeln!(text);
    let _ = writeln!(text, "Quality factors (x1e6, extrinsic law: {}):", outputs.q_extr_law);
    for row in &outputs.q_table {
        let _ = writeln!(
            text,
            "  {:<8} Q_intr = {:>6.2}   Q_extr = {}   Q_int = {}",
            row.device,
            row.q_intr / 1e6,
            row.q_extr_applied
                .map(|q| format!("{:>6.1}", q / 1e6))
                .unwrap_or_else(|| "   n/a".into()),
            row.q_int_reconstructed
                .map(|q| format!("{:>6.2}", q / 1e6))
                .unwrap_or_else(|| "  n/a".into()),
        );
    }
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "Oxide regrowth: delta_t_MA = {:.2} nm   tan_delta_MA = ({:.2} +/- {:.2}) x1e-3",
        outputs.regrowth_delta_t_ma_nm,
        outputs.regrowth_tan_delta_ma * 1e3,
        outputs.regrowth_tan_delta_ma_std_error * 1e3
    );
    let _ = writeln!(
        text,
        "Budget conditioning: cond = {:.3e}{}",
        outputs.budget_condition_number,
        if outputs.budget_collinearity_warning {
            "  [collinearity warning: direct inversion unreliable]"
        } else {
            ""
        }
    );
    std::fs::write(path, text)
        .map_err(|e| CliError::from_io(&format!("writing {}", path.display()), e))
}
