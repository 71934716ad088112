//! `cmcgrad`: radial tables, configured solves and verification of stored fields.
//!
//! Exit codes: 0 success, 1 the solver did not converge, 2 configuration,
//! schema or I/O error, 3 a diagnostic check failed.

mod config;
mod solve;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;

use cmcgrad::{ModelKind, RadialSolution};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("solver failed: {0}")]
    NonConvergence(String),
    #[error("diagnostics failed: {0}")]
    Diagnostics(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::NonConvergence(_) => 1,
            CliError::Config(_) | CliError::Schema(_) | CliError::Io(_) => 2,
            CliError::Diagnostics(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "cmcgrad", version, about = "Constant mean curvature graphs with prescribed gradient image")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form radial solution on concentric balls: prints c and a table of (r, u, u', u'').
    Radial {
        /// Dimension.
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Radius of the domain ball.
        #[arg(long, default_value_t = 1.0)]
        r0: f64,
        /// Radius of the gradient-image ball (boundary slope).
        #[arg(long)]
        t0: f64,
        #[arg(long, default_value = "minkowski")]
        model: ModelKind,
        /// Number of equally spaced radii in [0, r0].
        #[arg(long, default_value_t = 11)]
        samples: usize,
        /// Write the table here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve the configured problem and write field, report, log and summary.
    Solve {
        config: PathBuf,
    },
    /// Recompute the diagnostics report for a stored field.
    Verify {
        /// A `field.json` written by `solve`.
        field: PathBuf,
        config: PathBuf,
        /// Also transform onto the target and evaluate the dual equation.
        #[arg(long)]
        dual: bool,
        /// Write the report JSON here and print the table instead.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Nine significant digits; plain decimals for moderate magnitudes.
pub fn fmt9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..9).contains(&e) {
        format!("{:.*}", (8 - e) as usize, x)
    } else {
        format!("{x:.8e}")
    }
}

fn radial(
    n: usize,
    r0: f64,
    t0: f64,
    model: ModelKind,
    samples: usize,
    output: Option<PathBuf>,
) -> Result<(), CliError> {
    let sol = RadialSolution::in_dimension(n, model, r0, t0).map_err(|e| CliError::Config(e.to_string()))?;
    if samples < 2 {
        return Err(CliError::Config(format!("samples must be at least 2, got {samples}")));
    }
    println!("c = {}", fmt9(sol.c));
    let mut table = String::from("r,u,du,d2u\n");
    for k in 0..samples {
        let r = if k + 1 == samples { r0 } else { r0 * k as f64 / (samples - 1) as f64 };
        let (u, du, d2u) = sol.radial_profile(r).map_err(|e| CliError::Config(e.to_string()))?;
        table.push_str(&format!("{r:.8e},{u:.8e},{du:.8e},{d2u:.8e}\n"));
    }
    match output {
        Some(path) => std::fs::write(&path, table).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Radial { n, r0, t0, model, samples, output } => radial(n, r0, t0, model, samples, output),
        Command::Solve { config } => solve::cmd_solve(&config),
        Command::Verify { field, config, dual, output } => solve::cmd_verify(&field, &config, dual, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
