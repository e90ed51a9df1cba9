//! `qflow`: load a Hamiltonian, run a flow, emit traces and summaries, or
//! run the self-verification suites.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "qflow", version, about = "Coupled-cluster downfolding and quantum-flow solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run a flow on an integral file and write trace/summary artifacts.
    Run(RunArgs),
    /// Run self-generating verification suites; exit 4 on any failure.
    Verify(VerifyArgs),
    /// Build an effective Hamiltonian for one active space and export it as
    /// a synthetic JSON Hamiltonian.
    ExportHeff(ExportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileFormat {
    Fcidump,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Qflow,
    Subflow,
    Ccflow,
    Bloch,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    /// Input Hamiltonian file.
    #[arg(long = "in")]
    pub input: std::path::PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FileFormat>,
    #[arg(long, value_enum, default_value = "qflow")]
    pub mode: Mode,
    /// Active electrons per space (template).
    #[arg(long, default_value_t = 4)]
    pub ne: usize,
    /// Active spatial orbitals per space (template).
    #[arg(long, default_value_t = 4)]
    pub no: usize,
    /// Gradient step size.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Maximum flow cycles (0 performs setup and reporting only).
    #[arg(long)]
    pub cycles: Option<usize>,
    /// Main-space energy tolerance per cycle (Hartree).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Trotter rank recorded in the configuration.
    #[arg(long)]
    pub trotter: Option<usize>,
    /// Effective-Hamiltonian method: `exact` or `bch:k`.
    #[arg(long)]
    pub heff: Option<String>,
    /// Sub-flow selection threshold on first-cycle |dE| (Hartree).
    #[arg(long = "select-threshold")]
    pub select_threshold: Option<f64>,
    /// Sub-flow selection keeping the top K spaces by first-cycle |dE|.
    #[arg(long = "select-topk")]
    pub select_topk: Option<usize>,
    #[arg(long, value_enum)]
    pub background: Option<OnOff>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Perturbative order for bloch mode.
    #[arg(long)]
    pub order: Option<usize>,
    /// Evaluate spaces against a frozen per-cycle snapshot.
    #[arg(long, value_enum)]
    pub jacobi: Option<OnOff>,
    /// Halve the step size until each step lowers the space energy.
    #[arg(long = "line-search", value_enum)]
    pub line_search: Option<OnOff>,
    /// Flat key=value configuration file; command-line flags win.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "qflow-out")]
    pub out: std::path::PathBuf,
}

#[derive(Args, Clone)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    /// Run a single named property suite instead of all of them.
    #[arg(long)]
    pub property: Option<String>,
}

#[derive(Args, Clone)]
pub struct ExportArgs {
    #[arg(long = "in")]
    pub input: std::path::PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FileFormat>,
    /// Occupied spatial orbitals of the space, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub occ: Vec<usize>,
    /// Virtual spatial orbitals of the space, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub virt: Vec<usize>,
    /// External-amplitude order: 0 = bare projection, 1 or 2 = perturbative.
    #[arg(long, default_value_t = 0)]
    pub order: usize,
    /// Output JSON path.
    #[arg(long)]
    pub out: std::path::PathBuf,
}

/// Exit codes: 1 bad flags, 2 parse/input errors, 3 flow divergence,
/// 4 failed verification property.
fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => commands::run::execute(args),
        Command::Verify(args) => commands::verify::execute(args),
        Command::ExportHeff(args) => commands::export::execute(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

/// Map library errors onto the documented exit codes.
fn classify(e: &anyhow::Error) -> u8 {
    use qflow_core::Error as E;
    if let Some(core) = e.downcast_ref::<E>() {
        return match core {
            E::Divergence(_) | E::NonConvergence(_) => 3,
            _ => 2,
        };
    }
    2
}

pub fn log_enabled() -> bool {
    matches!(
        std::env::var("QFLOW_LOG").as_deref(),
        Ok("1") | Ok("info") | Ok("debug") | Ok("trace")
    )
}

#[macro_export]
macro_rules! qlog {
    ($($arg:tt)*) => {
        if $crate::log_enabled() {
            eprintln!($($arg)*);
        }
    };
}
