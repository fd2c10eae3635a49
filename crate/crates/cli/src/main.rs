//! `fluxlaws`: simulation, diagnostics and verification runs with JSON/CSV
//! reports.
//!
//! Exit codes: 0 success with every gate passed, 1 gate failure or numerical
//! failure, 2 usage or configuration error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files (exit 2).
    Usage(String),
    /// Filesystem failure while writing outputs (exit 2).
    Io(String),
    /// Numerical failure (exit 1).
    Numeric(String),
}

impl From<fluxlaws::Error> for CliError {
    fn from(e: fluxlaws::Error) -> Self {
        use fluxlaws::Error as E;
        match e {
            E::Invalid(_) | E::Format(_) | E::Io(_) => CliError::Usage(e.to_string()),
            E::Overflow(_) | E::Divergence(_) | E::Unstable(_) => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "fluxlaws", version, about = "Stochastic 2D turbulence runs and flux-law diagnostics")]
struct Cli {
    /// Worker threads. Some sums are chunked by thread count, so
    /// byte-identical reproduction needs the same value.
    #[arg(long, global = true, env = "FLUXLAWS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact sphere-moment and flux-law coefficient tables.
    Coeffs(CoeffsArgs),
    /// Kernel and coefficient-family tables with their cross-checks.
    Kernels(KernelsArgs),
    /// Run the stochastic vorticity solver and write snapshots.
    Simulate(SimulateArgs),
    /// Structure functions of a run's snapshots.
    Structure(RunArgs),
    /// KHM budgets and residuals of a run.
    KhmCheck(RunArgs),
    /// Energy / enstrophy balance and the D_γ ladder of a run.
    Budget(RunArgs),
    /// Cascade detection over a viscosity sweep manifest (JSON).
    CascadeDetect(CascadeArgs),
    /// Filtration limits and the cascade corollary families.
    FiltrationTest(FiltrationArgs),
}

#[derive(Args, Debug)]
pub struct CoeffsArgs {
    #[arg(long)]
    pub d: usize,
    /// Largest moment order in the table.
    #[arg(long, default_value_t = 8)]
    pub kmax: u32,
    /// Directory for coeffs.csv and report.json; stdout CSV otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct KernelsArgs {
    #[arg(long)]
    pub d: usize,
    /// Kernel orders.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub p: Vec<u32>,
    #[arg(long, default_value_t = 50.0)]
    pub xmax: f64,
    #[arg(long, default_value_t = 500)]
    pub points: usize,
    /// Largest admissible series-vs-quadrature difference.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Also tabulate the coefficient families of dimension `d`.
    #[arg(long)]
    pub families: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Run directory written by `simulate`.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory (defaults to the run directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CascadeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FiltrationArgs {
    /// Optional TOML overriding tolerances and sweeps.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn setup_threads(n: Option<usize>) -> Result<(), CliError> {
    let n = n.unwrap_or_else(|| std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1));
    if n == 0 {
        return Err(CliError::Usage("--threads must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = setup_threads(cli.threads).and_then(|_| match cli.command {
        Command::Coeffs(a) => commands::coeffs(&a),
        Command::Kernels(a) => commands::kernels(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Structure(a) => commands::structure(&a),
        Command::KhmCheck(a) => commands::khm_check(&a),
        Command::Budget(a) => commands::budget(&a),
        Command::CascadeDetect(a) => commands::cascade_detect(&a),
        Command::FiltrationTest(a) => commands::filtration_test(&a),
    });
    match result {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in failures {
                eprintln!("gate failed: {f}");
            }
            ExitCode::from(1)
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(m)) | Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
