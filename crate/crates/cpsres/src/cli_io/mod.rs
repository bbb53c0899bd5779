//! Configuration, dataset ingestion, and deterministic report emission for
//! the command-line front end.
//!
//! One TOML configuration file drives every command; units are embedded in
//! the key names (`*_hz`, `*_nm`, `*_dbm`) because unit mix-ups are the
//! dominant failure mode in this kind of tooling. Unknown keys are rejected
//! at load, and referenced files must exist. Reports are JSON documents with
//! content digests of every input, so identical inputs produce byte-identical
//! reports.

pub mod commands;
pub mod csvio;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::field_solver::{CpsGeometry, GridSpec};
use crate::inductance_solver::FilamentSpec;
use crate::loss_budget::SkinEffectLaw;
use crate::optim::LmConfig;
use crate::tls_model::MaterialConstants;

/// Exit-code classes for the CLI; each maps to a distinct nonzero code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input files or configuration.
    Parse,
    /// Violated preconditions or invalid values.
    Precondition,
    /// Fits or solves that did not produce a usable result.
    Convergence,
    /// A pipeline stage whose required inputs are missing.
    Dependency,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Parse => 2,
            ErrorKind::Precondition => 3,
            ErrorKind::Convergence => 4,
            ErrorKind::Dependency => 5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn parse(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Parse, message: message.into() }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Precondition, message: message.into() }
    }

    pub fn convergence(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Convergence, message: message.into() }
    }

    pub fn dependency(message: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Dependency, message: message.into() }
    }

    pub fn from_io(context: &str, err: std::io::Error) -> Self {
        CliError::parse(format!("{context}: {err}"))
    }
}

impl From<crate::trace_fit::FitError> for CliError {
    fn from(err: crate::trace_fit::FitError) -> Self {
        use crate::trace_fit::FitError::*;
        let kind = match err {
            InvalidInput(_) | InvalidParameter(_) | InsufficientSpan { .. } => {
                ErrorKind::Precondition
            }
            NoResonance { .. } | NotConverged { .. } => ErrorKind::Convergence,
        };
        CliError { kind, message: err.to_string() }
    }
}

impl From<crate::tls_model::TlsError> for CliError {
    fn from(err: crate::tls_model::TlsError) -> Self {
        use crate::tls_model::TlsError::*;
        let kind = match err {
            InvalidInput(_) | EmptySelection(_) => ErrorKind::Precondition,
            IllPosed(_) | NotConverged { .. } => ErrorKind::Convergence,
        };
        CliError { kind, message: err.to_string() }
    }
}

impl From<crate::field_solver::SolverError> for CliError {
    fn from(err: crate::field_solver::SolverError) -> Self {
        use crate::field_solver::SolverError::*;
        let kind = match err {
            InvalidGeometry(_) | InvalidGrid(_) | UnmeshableLayer { .. } => {
                ErrorKind::Precondition
            }
            NonlinearRegime { .. } => ErrorKind::Convergence,
        };
        CliError { kind, message: err.to_string() }
    }
}

impl From<crate::inductance_solver::InductanceError> for CliError {
    fn from(err: crate::inductance_solver::InductanceError) -> Self {
        use crate::inductance_solver::InductanceError::*;
        let kind = match err {
            InvalidInput(_) => ErrorKind::Precondition,
            IllConditioned { .. } => ErrorKind::Convergence,
        };
        CliError { kind, message: err.to_string() }
    }
}

impl From<crate::regrowth::RegrowthError> for CliError {
    fn from(err: crate::regrowth::RegrowthError) -> Self {
        use crate::regrowth::RegrowthError::*;
        match err {
            InvalidInput(m) => CliError::precondition(m),
            NoRegrowthSignal => CliError::convergence(err.to_string()),
            Field(e) => e.into(),
            Inductance(e) => e.into(),
        }
    }
}

impl From<crate::loss_budget::BudgetError> for CliError {
    fn from(err: crate::loss_budget::BudgetError) -> Self {
        use crate::loss_budget::BudgetError::*;
        let kind = match err {
            InvalidInput(_) | NonPhysical { .. } | Underdetermined { .. } => {
                ErrorKind::Precondition
            }
        };
        CliError { kind, message: err.to_string() }
    }
}

/// Material constants block of the configuration (SI with unit-suffixed
/// names). All defaults are the literature values baked into
/// [`crate::constants`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub gap_energy_j: f64,
    pub dos_fermi_per_j_um3: f64,
    pub london_depth_nm: f64,
    pub rho_nb_kg_m3: f64,
    pub rho_nb2o5_kg_m3: f64,
    pub a_nb: f64,
    pub a_o: f64,
    pub eps_interface: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        use crate::constants::*;
        MaterialConfig {
            gap_energy_j: NB_GAP_ENERGY_J,
            dos_fermi_per_j_um3: NB_DOS_FERMI_PER_J_UM3,
            london_depth_nm: NB_LONDON_DEPTH_M * 1e9,
            rho_nb_kg_m3: NB_DENSITY_KG_M3,
            rho_nb2o5_kg_m3: NB2O5_DENSITY_KG_M3,
            a_nb: NB_ATOMIC_MASS,
            a_o: O_ATOMIC_MASS,
            eps_interface: 10.0,
        }
    }
}

impl MaterialConfig {
    pub fn to_constants(&self) -> MaterialConstants {
        MaterialConstants {
            gap_energy: self.gap_energy_j,
            dos_fermi: self.dos_fermi_per_j_um3,
            london_depth: self.london_depth_nm * 1e-9,
            rho_nb: self.rho_nb_kg_m3,
            rho_nb2o5: self.rho_nb2o5_kg_m3,
            a_nb: self.a_nb,
            a_o: self.a_o,
            eps_interface: self.eps_interface,
        }
    }
}

/// Measurement-chain calibration: one scalar line attenuation plus the
/// cavity-wall reference for the extrinsic model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub line_attenuation_db: f64,
    pub r_meas_cavity_ohm_sq: f64,
    pub f_cavity_hz: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            line_attenuation_db: 70.0,
            r_meas_cavity_ohm_sq: 4.60e-3,
            f_cavity_hz: 7.687e9,
        }
    }
}

/// Field-solver refinement block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldGridConfig {
    pub min_cell_nm: f64,
    pub growth_ratio: f64,
    pub domain_factor: f64,
    pub layer_thickness_nm: f64,
    pub linearity_tolerance: f64,
    pub refine_check: bool,
}

impl Default for FieldGridConfig {
    fn default() -> Self {
        let g = GridSpec::participation();
        FieldGridConfig {
            min_cell_nm: g.min_cell * 1e9,
            growth_ratio: g.growth_ratio,
            domain_factor: g.domain_factor,
            layer_thickness_nm: g.layer_thickness * 1e9,
            linearity_tolerance: g.linearity_tolerance,
            refine_check: true,
        }
    }
}

impl FieldGridConfig {
    pub fn to_grid(&self) -> GridSpec {
        GridSpec {
            min_cell: self.min_cell_nm * 1e-9,
            growth_ratio: self.growth_ratio,
            domain_factor: self.domain_factor,
            layer_thickness: self.layer_thickness_nm * 1e-9,
            linearity_tolerance: self.linearity_tolerance,
            refine_check: self.refine_check,
        }
    }
}

/// Filament-grid block for the inductance solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilamentConfig {
    pub nx: usize,
    pub ny: usize,
    pub grading: f64,
}

impl Default for FilamentConfig {
    fn default() -> Self {
        let f = FilamentSpec::default();
        FilamentConfig { nx: f.nx, ny: f.ny, grading: f.grading }
    }
}

impl FilamentConfig {
    pub fn to_spec(&self) -> FilamentSpec {
        FilamentSpec { nx: self.nx, ny: self.ny, grading: self.grading }
    }
}

/// Fit tolerances exposed in configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub rel_step_tol: f64,
    pub rel_cost_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let lm = LmConfig::default();
        FitConfig {
            max_iterations: lm.max_iterations,
            rel_step_tol: lm.rel_step_tol,
            rel_cost_tol: lm.rel_cost_tol,
        }
    }
}

/// Budget block: the collinearity threshold and which skin-effect law to
/// apply to the user-supplied classical extrinsic quality factors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub collinearity_threshold: f64,
    /// "anomalous", "classical" or "none" — recorded back into reports.
    pub q_extr_law: String,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            collinearity_threshold: 1e3,
            q_extr_law: "anomalous".into(),
        }
    }
}

impl BudgetConfig {
    pub fn law(&self) -> Result<Option<SkinEffectLaw>, CliError> {
        match self.q_extr_law.as_str() {
            "anomalous" => Ok(Some(SkinEffectLaw::Anomalous)),
            "classical" => Ok(Some(SkinEffectLaw::Classical)),
            "none" => Ok(None),
            other => Err(CliError::parse(format!(
                "unknown q_extr_law '{other}' (expected anomalous|classical|none)"
            ))),
        }
    }
}

/// Regrowth block: the thickness samples for the forward curves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegrowthConfig {
    pub curve_thicknesses_nm: Vec<f64>,
}

impl Default for RegrowthConfig {
    fn default() -> Self {
        RegrowthConfig {
            curve_thicknesses_nm: vec![0.0, 1.0, 2.5, 5.0, 10.0, 20.0],
        }
    }
}

/// Per-device entry: geometry file plus the quantities that only the
/// experiment (or an external 3D simulation) can supply.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub geometry: PathBuf,
    pub f0_hz: f64,
    /// Extrinsic Q from classical-skin-effect simulation, if available.
    #[serde(default)]
    pub q_extr_classical: Option<f64>,
}

/// Top-level configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    pub material: MaterialConfig,
    pub calibration: CalibrationConfig,
    pub field_grid: FieldGridConfig,
    pub filaments: FilamentConfig,
    pub fit: FitConfig,
    pub budget: BudgetConfig,
    pub regrowth: RegrowthConfig,
    pub devices: BTreeMap<String, DeviceConfig>,
    /// Device used for the temperature sweep (the quasiparticle bound uses
    /// its kinetic fraction).
    pub temperature_sweep_device: Option<String>,
}

impl ProjectConfig {
    /// Load, validate, and resolve device-geometry paths relative to the
    /// configuration file location.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::from_io(&format!("reading {}", path.display()), e))?;
        let mut config: ProjectConfig = toml::from_str(&text)
            .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (name, device) in config.devices.iter_mut() {
            if device.geometry.is_relative() {
                device.geometry = base.join(&device.geometry);
            }
            if !device.geometry.exists() {
                return Err(CliError::precondition(format!(
                    "device {name}: geometry file {} does not exist",
                    device.geometry.display()
                )));
            }
            if !(device.f0_hz > 0.0) {
                return Err(CliError::precondition(format!(
                    "device {name}: f0_hz must be positive"
                )));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.material;
        for (name, value) in [
            ("gap_energy_j", m.gap_energy_j),
            ("dos_fermi_per_j_um3", m.dos_fermi_per_j_um3),
            ("london_depth_nm", m.london_depth_nm),
            ("rho_nb_kg_m3", m.rho_nb_kg_m3),
            ("rho_nb2o5_kg_m3", m.rho_nb2o5_kg_m3),
            ("a_nb", m.a_nb),
            ("a_o", m.a_o),
            ("eps_interface", m.eps_interface),
            ("r_meas_cavity_ohm_sq", self.calibration.r_meas_cavity_ohm_sq),
            ("f_cavity_hz", self.calibration.f_cavity_hz),
        ] {
            if !(value > 0.0) {
                return Err(CliError::precondition(format!(
                    "material/calibration constant {name} must be positive"
                )));
            }
        }
        self.budget.law()?;
        if self.regrowth.curve_thicknesses_nm.len() < 2
            || self.regrowth.curve_thicknesses_nm[0] != 0.0
        {
            return Err(CliError::precondition(
                "regrowth.curve_thicknesses_nm must start at 0 with at least two samples",
            ));
        }
        Ok(())
    }

    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            max_iterations: self.fit.max_iterations,
            rel_step_tol: self.fit.rel_step_tol,
            rel_cost_tol: self.fit.rel_cost_tol,
            ..LmConfig::default()
        }
    }
}

/// Geometry file: structured key-value with unit-suffixed names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub width_um: f64,
    pub gap_um: f64,
    pub length_um: f64,
    pub t_nb_nm: f64,
    pub eps_substrate: f64,
    #[serde(default)]
    pub eps_substrate_vertical: Option<f64>,
    pub eps_interface: f64,
    #[serde(default)]
    pub t_ma_nm: f64,
    #[serde(default)]
    pub t_ms_nm: f64,
    #[serde(default)]
    pub t_sa_nm: f64,
    #[serde(default)]
    pub lambda_nm: Option<f64>,
    #[serde(default)]
    pub filament_nx: Option<usize>,
    #[serde(default)]
    pub filament_ny: Option<usize>,
}

impl GeometryFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::from_io(&format!("reading {}", path.display()), e))?;
        let file: GeometryFile = toml::from_str(&text)
            .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        file.to_geometry()?.validate().map_err(CliError::from)?;
        Ok(file)
    }

    pub fn to_geometry(&self) -> Result<CpsGeometry, CliError> {
        let geom = CpsGeometry {
            width: self.width_um * 1e-6,
            gap: self.gap_um * 1e-6,
            length: self.length_um * 1e-6,
            t_nb: self.t_nb_nm * 1e-9,
            eps_substrate: self.eps_substrate,
            eps_substrate_vertical: self.eps_substrate_vertical,
            eps_interface: self.eps_interface,
            eps_air: 1.0,
            t_ma: self.t_ma_nm * 1e-9,
            t_ms: self.t_ms_nm * 1e-9,
            t_sa: self.t_sa_nm * 1e-9,
        };
        if !(geom.t_nb > 0.0) {
            return Err(CliError::precondition(
                "geometry t_nb_nm must be positive".into(),
            ));
        }
        Ok(geom)
    }
}

/// Deterministic run report wrapper: command name, toolkit version, content
/// digests of every input, warnings, and the command-specific outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport<T> {
    pub command: String,
    pub toolkit_version: String,
    pub seed: u64,
    pub input_digests: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub outputs: T,
}

impl<T: Serialize> RunReport<T> {
    pub fn new(command: &str, seed: u64, outputs: T) -> Self {
        RunReport {
            command: command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            input_digests: BTreeMap::new(),
            warnings: Vec::new(),
            outputs,
        }
    }

    pub fn digest_input(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::from_io(&format!("reading {}", path.display()), e))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.input_digests
            .insert(path.display().to_string(), hex_digest(&hasher.finalize()));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::parse(format!("serializing report: {e}")))?;
        std::fs::write(path, json + "\n")
            .map_err(|e| CliError::from_io(&format!("writing {}", path.display()), e))
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Read a JSON run report back.
pub fn read_report<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<RunReport<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::dependency(format!("missing report {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let config = ProjectConfig::default();
        config.validate().unwrap();
        let text = toml::to_string_pretty(&config).unwrap();
        let back: ProjectConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ProjectConfig>("[material]\nbogus_key = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        let err =
            toml::from_str::<ProjectConfig>("unknown_section = true\n").unwrap_err();
        assert!(err.to_string().contains("unknown_section"));
    }

    #[test]
    fn nonpositive_constants_are_rejected() {
        let mut config = ProjectConfig::default();
        config.material.gap_energy_j = -1.0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn geometry_units_convert() {
        let file: GeometryFile = toml::from_str(
            "width_um = 10.0\ngap_um = 46.0\nlength_um = 5847.0\nt_nb_nm = 145.0\n\
             eps_substrate = 10.0\neps_interface = 10.0\n",
        )
        .unwrap();
        let geom = file.to_geometry().unwrap();
        assert_eq!(geom.width, 10e-6);
        assert_eq!(geom.gap, 46e-6);
        assert_eq!(geom.t_nb, 145e-9);
    }
}
