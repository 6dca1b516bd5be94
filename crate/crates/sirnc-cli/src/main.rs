//! `sirnc` — batch front end for the SIR-NC toolkit.
//!
//! Every subcommand reads its parameters from a flat `key = value` spec file
//! (or the built-in defaults), runs the corresponding solver, and writes CSV
//! data files plus a manifest with content hashes into the output directory.
//! Runs are deterministic: same spec + seed means bit-identical outputs.
//!
//! Exit codes: 0 success, 2 spec error, 3 numeric failure, 4 check failure
//! (`reproduce --check`).

mod commands;
mod manifest;
mod repro;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sirnc",
    version,
    about = "Closed forms, model variants, and finite-horizon control of the SIR-NC epidemic model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Key-value run spec file (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    spec: Option<PathBuf>,

    /// Output directory for data files and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for randomized sweeps.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Override for the integration / quadrature step.
    #[arg(long, global = true)]
    step: Option<f64>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form trajectory of the basic model.
    Trajectory,
    /// Classic SIR (RK4) against SIR-NC (closed form) on one grid.
    CompareSir,
    /// Peak time and size as a function of extra removal capacity.
    PeakSweep,
    /// Trajectory with imported infections.
    Imported,
    /// Two coupled communities.
    Communities,
    /// Births and natural deaths around the epidemic.
    Vital,
    /// First-order coupling correction vs the coupled truth.
    Perturbation,
    /// Receding-horizon (MPC) lockdown/testing controller.
    ControlMpc,
    /// Grid-based backward recursion; dumps the value tables.
    ControlDp,
    /// Replicator-weighted multi-objective control.
    Multiobj,
    /// Nested fast/slow two-community control.
    TwoTimescale,
    /// Regenerate a registered reference dataset (or `all`).
    Reproduce {
        /// Target id (fig1a, fig1b, fig2, ..., table1) or `all`.
        target: String,
        /// Also run the target's numeric checks; failures exit with 4.
        #[arg(long)]
        check: bool,
    },
}

/// Error carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed spec / unknown keys / bad target id.
    Spec(String),
    /// Solver or I/O failure.
    Numeric(String),
    /// A `--check` assertion failed.
    Check(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Spec(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Check(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Spec(_) => "spec",
            CliError::Numeric(_) => "numeric",
            CliError::Check(_) => "check",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Spec(m) | CliError::Numeric(m) | CliError::Check(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numeric(format!("i/o failure: {e}"))
    }
}

macro_rules! numeric_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Numeric(e.to_string())
            }
        }
    )*};
}
numeric_from!(
    sirnc::closedform::ClosedFormError,
    sirnc::ode::OdeError,
    sirnc::perturbation::PerturbationError,
    sirnc::control::ControlError,
    sirnc::multiobj::MultiObjError,
    sirnc::core::ScheduleError
);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One parseable record per failure.
            eprintln!("error: kind={} code={} message={:?}", e.kind(), e.code(), e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    std::fs::create_dir_all(&cli.out)?;
    let ctx = commands::Context {
        out: cli.out.clone(),
        seed: cli.seed,
        step: cli.step,
        quiet: cli.quiet,
        spec_path: cli.spec.clone(),
    };
    match &cli.command {
        Command::Trajectory => commands::run_named(&ctx, "trajectory"),
        Command::CompareSir => commands::run_named(&ctx, "compare-sir"),
        Command::PeakSweep => commands::run_named(&ctx, "peak-sweep"),
        Command::Imported => commands::run_named(&ctx, "imported"),
        Command::Communities => commands::run_named(&ctx, "communities"),
        Command::Vital => commands::run_named(&ctx, "vital"),
        Command::Perturbation => commands::run_named(&ctx, "perturbation"),
        Command::ControlMpc => commands::run_named(&ctx, "control-mpc"),
        Command::ControlDp => commands::run_named(&ctx, "control-dp"),
        Command::Multiobj => commands::run_named(&ctx, "multiobj"),
        Command::TwoTimescale => commands::run_named(&ctx, "two-timescale"),
        Command::Reproduce { target, check } => repro::run(&ctx, target, *check),
    }
}
