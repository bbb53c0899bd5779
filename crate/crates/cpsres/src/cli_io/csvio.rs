//! CSV readers and writers for the measurement file formats.
//!
//! All readers accept `#`-prefixed comment lines so fixtures can carry their
//! provenance in the file header.

use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use super::CliError;
use crate::constants::dbm_to_watts;
use crate::regrowth::RegrowthObservation;
use crate::tls_model::{PowerSweepPoint, TemperatureSweepPoint};
use crate::trace_fit::ReflectionTrace;

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

fn record_error(path: &Path, position: Option<&csv::Position>, err: impl std::fmt::Display) -> CliError {
    let line = position.map(|p| p.line().to_string()).unwrap_or_else(|| "?".into());
    CliError::parse(format!("{} line {line}: {err}", path.display()))
}

/// Sidecar metadata for a reflection trace (same stem, `.toml` extension).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMetadata {
    pub applied_power_dbm: f64,
    #[serde(default)]
    pub line_attenuation_db: Option<f64>,
    pub temperature_k: f64,
}

/// Read `frequency_hz,s11_real,s11_imag` plus the optional sidecar.
/// `default_attenuation_db` comes from the calibration block and applies
/// when the sidecar does not override it.
pub fn read_trace(
    path: &Path,
    default_attenuation_db: f64,
) -> Result<(ReflectionTrace, Option<TraceMetadata>), CliError> {
    let mut rdr = reader(path)?;
    expect_headers(&mut rdr, path, &["frequency_hz", "s11_real", "s11_imag"])?;
    let mut frequencies = Vec::new();
    let mut s11 = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| record_error(path, e.position(), e.to_string()))?;
        let parse = |idx: usize| -> Result<f64, CliError> {
            record
                .get(idx)
                .ok_or_else(|| record_error(path, record.position(), "missing column"))?
                .parse::<f64>()
                .map_err(|e| record_error(path, record.position(), e))
        };
        frequencies.push(parse(0)?);
        s11.push(Complex64::new(parse(1)?, parse(2)?));
    }

    let sidecar_path = path.with_extension("toml");
    let metadata = if sidecar_path.exists() {
        let text = std::fs::read_to_string(&sidecar_path)
            .map_err(|e| CliError::from_io(&format!("reading {}", sidecar_path.display()), e))?;
        Some(
            toml::from_str::<TraceMetadata>(&text)
                .map_err(|e| CliError::parse(format!("{}: {e}", sidecar_path.display())))?,
        )
    } else {
        None
    };

    let (power_w, temperature) = match &metadata {
        Some(meta) => {
            let attenuation = meta.line_attenuation_db.unwrap_or(default_attenuation_db);
            (
                dbm_to_watts(meta.applied_power_dbm - attenuation),
                meta.temperature_k,
            )
        }
        // Placeholder metadata keeps the trace usable for fitting when no
        // sidecar is present; photon numbers are then omitted downstream.
        None => (1e-15, 0.020),
    };
    let trace = ReflectionTrace::new(frequencies, s11, power_w, temperature)
        .map_err(CliError::from)?;
    Ok((trace, metadata))
}

/// Sweep sidecar: the fixed quantities of a sweep file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepMetadata {
    pub f0_hz: f64,
    #[serde(default)]
    pub temperature_k: Option<f64>,
}

pub fn read_sweep_metadata(path: &Path) -> Result<SweepMetadata, CliError> {
    let sidecar = path.with_extension("toml");
    let text = std::fs::read_to_string(&sidecar).map_err(|e| {
        CliError::dependency(format!(
            "sweep sidecar {} (f0_hz, temperature_k): {e}",
            sidecar.display()
        ))
    })?;
    toml::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", sidecar.display())))
}

/// Read `n_photon,q_int[,q_int_sigma]`. Returns the points and a warning
/// when the sigma column is absent (uniform weights apply).
pub fn read_power_sweep(path: &Path) -> Result<(Vec<PowerSweepPoint>, Option<String>), CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?
        .clone();
    let has_sigma = headers.iter().any(|h| h == "q_int_sigma");
    if headers.get(0) != Some("n_photon") || headers.get(1) != Some("q_int") {
        return Err(CliError::parse(format!(
            "{}: expected header n_photon,q_int[,q_int_sigma]",
            path.display()
        )));
    }
    let mut points = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| record_error(path, e.position(), e.to_string()))?;
        let parse = |idx: usize| -> Result<f64, CliError> {
            record
                .get(idx)
                .ok_or_else(|| record_error(path, record.position(), "missing column"))?
                .parse::<f64>()
                .map_err(|e| record_error(path, record.position(), e))
        };
        points.push(PowerSweepPoint {
            n_photon: parse(0)?,
            q_int: parse(1)?,
            q_sigma: if has_sigma { Some(parse(2)?) } else { None },
        });
    }
    let warning = (!has_sigma)
        .then(|| "no q_int_sigma column: using uniform fit weights".to_string());
    Ok((points, warning))
}

/// Read `temperature_k,q_intr[,q_intr_sigma]`.
pub fn read_temperature_sweep(
    path: &Path,
) -> Result<(Vec<TemperatureSweepPoint>, Option<String>), CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?
        .clone();
    let has_sigma = headers.iter().any(|h| h == "q_intr_sigma");
    if headers.get(0) != Some("temperature_k") || headers.get(1) != Some("q_intr") {
        return Err(CliError::parse(format!(
            "{}: expected header temperature_k,q_intr[,q_intr_sigma]",
            path.display()
        )));
    }
    let mut points = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| record_error(path, e.position(), e.to_string()))?;
        let parse = |idx: usize| -> Result<f64, CliError> {
            record
                .get(idx)
                .ok_or_else(|| record_error(path, record.position(), "missing column"))?
                .parse::<f64>()
                .map_err(|e| record_error(path, record.position(), e))
        };
        points.push(TemperatureSweepPoint {
            temperature_k: parse(0)?,
            q_intr: parse(1)?,
            q_sigma: if has_sigma { Some(parse(2)?) } else { None },
        });
    }
    let warning = (!has_sigma)
        .then(|| "no q_intr_sigma column: using uniform fit weights".to_string());
    Ok((points, warning))
}

/// Read regrowth observations:
/// `device_id,f0_before_hz,f0_after_hz,q_intr_before,q_intr_after`.
pub fn read_observations(path: &Path) -> Result<Vec<RegrowthObservation>, CliError> {
    let mut rdr = reader(path)?;
    expect_headers(
        &mut rdr,
        path,
        &[
            "device_id",
            "f0_before_hz",
            "f0_after_hz",
            "q_intr_before",
            "q_intr_after",
        ],
    )?;
    let mut observations = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| record_error(path, e.position(), e.to_string()))?;
        let parse = |idx: usize| -> Result<f64, CliError> {
            record
                .get(idx)
                .ok_or_else(|| record_error(path, record.position(), "missing column"))?
                .parse::<f64>()
                .map_err(|e| record_error(path, record.position(), e))
        };
        observations.push(RegrowthObservation {
            device_id: record
                .get(0)
                .ok_or_else(|| record_error(path, record.position(), "missing device_id"))?
                .to_string(),
            f0_before: parse(1)?,
            f0_after: parse(2)?,
            q_intr_before: parse(3)?,
            q_intr_after: parse(4)?,
            // Filled in from the participation stage.
            p_tilde_ma_eff: f64::NAN,
        });
    }
    Ok(observations)
}

/// Budget rows: `device_id,q_intr,p_ma_eff,p_ms_eff,p_sa,qp_coeff`.
pub fn read_budget_rows(path: &Path) -> Result<Vec<crate::loss_budget::BudgetRow>, CliError> {
    let mut rdr = reader(path)?;
    expect_headers(
        &mut rdr,
        path,
        &["device_id", "q_intr", "p_ma_eff", "p_ms_eff", "p_sa", "qp_coeff"],
    )?;
    let mut rows = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| record_error(path, e.position(), e.to_string()))?;
        let parse = |idx: usize| -> Result<f64, CliError> {
            record
                .get(idx)
                .ok_or_else(|| record_error(path, record.position(), "missing column"))?
                .parse::<f64>()
                .map_err(|e| record_error(path, record.position(), e))
        };
        let q_intr = parse(1)?;
        if !(q_intr > 0.0) {
            return Err(record_error(path, record.position(), "q_intr must be positive"));
        }
        rows.push(crate::loss_budget::BudgetRow {
            device_id: record.get(0).unwrap_or("").to_string(),
            intrinsic_loss: 1.0 / q_intr,
            p_ma_eff: parse(2)?,
            p_ms_eff: parse(3)?,
            p_sa: parse(4)?,
            qp_coeff: parse(5)?,
        });
    }
    Ok(rows)
}

fn expect_headers(
    rdr: &mut csv::Reader<std::fs::File>,
    path: &Path,
    expected: &[&str],
) -> Result<(), CliError> {
    let headers = rdr
        .headers()
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(CliError::parse(format!(
            "{}: expected header {}, got {}",
            path.display(),
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

/// Write a tidy plot CSV: one observation per row.
pub fn write_tidy_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    wtr.write_record(header)
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    for row in rows {
        wtr.write_record(row)
            .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    }
    wtr.flush()
        .map_err(|e| CliError::from_io(&format!("writing {}", path.display()), e))
}
