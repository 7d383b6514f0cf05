//! `kerrcrit`: steady states, sensing figures of merit and readout maps of the
//! driven Kerr resonator from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use thiserror::Error;

use config::{Format, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn invalid(key: &str, reason: &str) -> Self {
        Self::Config(format!("invalid value for `{key}`: {reason}"))
    }

    /// Parameter errors raised while checking a config are config errors.
    pub fn from_core_config(e: kerrcrit::Error) -> Self {
        match e {
            kerrcrit::Error::InvalidParameter { name, value, reason } => {
                Self::Config(format!("invalid value for `{name}` = {value}: {reason}"))
            }
            other => Self::Config(other.to_string()),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

impl From<kerrcrit::Error> for CliError {
    fn from(e: kerrcrit::Error) -> Self {
        Self::Numerical(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "kerrcrit", version, about = "Critical Kerr resonator sensing and readout")]
struct Cli {
    /// Log at info level (`RUST_LOG` takes precedence).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML file with a `[<command>]` section and an optional `[run]` section.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a parameter of the command section, e.g. `--set chi=0.04`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (default `out/<command>`).
    #[arg(short, long)]
    out: Option<String>,
    #[arg(short, long, value_enum)]
    format: Option<Format>,
    /// Worker threads for grid sweeps.
    #[arg(short, long)]
    workers: Option<usize>,
    /// Record failed grid points as NaN and exit with status 4 instead of 3.
    #[arg(long)]
    keep_going: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady state at one parameter point, with `rho.json`.
    Steady(RunArgs),
    /// Quantum Fisher information over drive amplitude, one table per Kerr value.
    QfiSweep(RunArgs),
    /// Homodyne, heterodyne and quantum Fisher information over drive amplitude.
    SnrSweep(RunArgs),
    /// Optimal SNR against Kerr nonlinearity and the fitted scaling constant.
    Scaling(RunArgs),
    /// Rescaled photon number in the thermodynamic limit.
    Thermo(RunArgs),
    /// Qubit readout error map over dispersive shift and drive.
    ReadoutMap(RunArgs),
    /// Flux sensitivity of the SQUID-terminated resonator (SI units).
    Magnetometer(RunArgs),
    /// Transient from the vacuum.
    TimeTrace(RunArgs),
    /// Steady-state Wigner function on a square `(x, p)` grid.
    Wigner(RunArgs),
    /// Round-trip every output file of a run directory.
    Validate { dir: PathBuf },
}

fn run(name: &str, args: RunArgs) -> Result<ExitCode, CliError> {
    let ov = Overrides { sets: args.sets, out: args.out, format: args.format, workers: args.workers, keep_going: args.keep_going };
    let cfg = config::parse_config(name, args.config.as_deref(), &ov)?;
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global() {
        warn!("could not size the worker pool: {e}");
    }
    let mut out = commands::run(&cfg.command)?;
    if !out.failures.is_empty() && !cfg.keep_going {
        return Err(CliError::Numerical(format!(
            "{} grid point(s) failed (rerun with --keep-going to keep the rest): {}",
            out.failures.len(),
            out.failures.join("; ")
        )));
    }
    let written = output::write_run(&cfg, &mut out)?;
    for p in &written {
        info!("wrote {}", p.display());
    }
    if out.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &out.failures {
            warn!("failed point {f}");
        }
        Ok(ExitCode::from(4))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Steady(a) => run("steady", a),
        Command::QfiSweep(a) => run("qfi-sweep", a),
        Command::SnrSweep(a) => run("snr-sweep", a),
        Command::Scaling(a) => run("scaling", a),
        Command::Thermo(a) => run("thermo", a),
        Command::ReadoutMap(a) => run("readout-map", a),
        Command::Magnetometer(a) => run("magnetometer", a),
        Command::TimeTrace(a) => run("time-trace", a),
        Command::Wigner(a) => run("wigner", a),
        Command::Validate { dir } => output::validate_dir(&dir).map(|files| {
            for f in files {
                println!("ok {f}");
            }
            ExitCode::SUCCESS
        }),
    };
    result.unwrap_or_else(|e| {
        error!("{e}");
        ExitCode::from(e.exit_code())
    })
}
