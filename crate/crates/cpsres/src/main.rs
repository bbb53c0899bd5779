//! `cpsres` — analysis pipelines for coplanar-stripline resonator loss
//! experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpsres::cli_io::commands::{self, CommandContext, SimulateWhat, SweepKind};
use cpsres::cli_io::{CliError, ProjectConfig};

#[derive(Parser)]
#[command(name = "cpsres", version, about = "CPS resonator loss analysis toolkit")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (TOML).
    #[arg(long, global = true, default_value = "cpsres.toml")]
    config: PathBuf,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed recorded in reports and used by any randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for batch items.
    #[arg(long, global = true, default_value_t = 4)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Fit single-port reflection traces (CSV) to the resonance model.
    Fit {
        /// Trace files: frequency_hz,s11_real,s11_imag.
        traces: Vec<PathBuf>,
    },
    /// Fit a photon-number or temperature sweep to the TLS loss model.
    Sweep {
        /// Sweep CSV; a same-stem .toml sidecar supplies f0_hz (and
        /// temperature_k for power sweeps).
        file: PathBuf,
        /// Sweep kind.
        #[arg(long, value_parser = ["power", "temperature"])]
        kind: String,
    },
    /// Run the cross-section solvers.
    Simulate {
        /// What to compute.
        #[arg(long, value_parser = ["participation", "inductance", "regrowth-curve"])]
        what: String,
        /// Geometry files; defaults to every configured device.
        geometries: Vec<PathBuf>,
    },
    /// Invert measured frequency shifts for the oxide regrowth thickness and
    /// extract the metal-air loss tangent.
    Regrowth {
        /// Observations CSV:
        /// device_id,f0_before_hz,f0_after_hz,q_intr_before,q_intr_after.
        observations: PathBuf,
    },
    /// Solve the multi-interface loss budget with conditioning diagnostics.
    Budget {
        /// Budget CSV: device_id,q_intr,p_ma_eff,p_ms_eff,p_sa,qp_coeff.
        rows: PathBuf,
    },
    /// Consolidate prior stage reports into the final document.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.kind.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let config = ProjectConfig::load(&cli.common.config)?;
    let ctx = CommandContext {
        config,
        config_path: cli.common.config.clone(),
        out_dir: cli.common.out.clone(),
        seed: cli.common.seed,
        jobs: cli.common.jobs,
    };
    match cli.command {
        Command::Fit { traces } => {
            let worst = commands::cmd_fit(&ctx, &traces)?;
            match worst {
                None => Ok(ExitCode::SUCCESS),
                Some(kind) => {
                    eprintln!("error: some traces failed; see fit_summary.json");
                    Ok(ExitCode::from(kind.exit_code() as u8))
                }
            }
        }
        Command::Sweep { file, kind } => {
            let kind = match kind.as_str() {
                "power" => SweepKind::Power,
                _ => SweepKind::Temperature,
            };
            commands::cmd_sweep(&ctx, &file, kind)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { what, geometries } => {
            let what = match what.as_str() {
                "participation" => SimulateWhat::Participation,
                "inductance" => SimulateWhat::Inductance,
                _ => SimulateWhat::RegrowthCurve,
            };
            commands::cmd_simulate(&ctx, what, &geometries)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Regrowth { observations } => {
            commands::cmd_regrowth(&ctx, &observations)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Budget { rows } => {
            commands::cmd_budget(&ctx, &rows)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report => {
            commands::cmd_report(&ctx)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
