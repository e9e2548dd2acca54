//! `l4deconv` command-line tool.
//!
//! Exit status: 0 on success, 1 for usage and input errors, 2 when a
//! numerical step fails (singular Gram, stalled line search, ...).

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::List;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<l4deconv::Error> for CliError {
    fn from(e: l4deconv::Error) -> Self {
        CliError {
            code: if e.is_numerical() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "l4deconv",
    version,
    about = "Short-and-sparse blind deconvolution on the sphere"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a kernel and a Bernoulli-Gaussian activation and write y = a0 ⊛ x0.
    Gen(GenArgs),
    /// Recover a kernel from an observation.
    Deconv(DeconvArgs),
    /// Evaluate the objective, curvature and region tests at given or sampled points.
    Landscape(LandscapeArgs),
    /// Average σ_min, κ and μ of random kernels per length.
    Params(ParamsArgs),
    /// Recovery-error grid over kernel length, sparsity and signal length.
    Grid(GridArgs),
    /// Fraction of initializations landing in the benign region.
    Initrate(InitrateArgs),
    /// Finite-sample versus population gaps as m grows.
    Conc(ConcArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Flat `key = value` config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct Workers {
    /// 0 = all cores, 1 = sequential, n = pool of n threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub curvature_tol: Option<f64>,
    #[arg(long)]
    pub armijo_c: Option<f64>,
    #[arg(long)]
    pub backtrack_factor: Option<f64>,
    #[arg(long)]
    pub initial_step: Option<f64>,
    #[arg(long)]
    pub escape_check_period: Option<usize>,
    #[arg(long)]
    pub min_eig_tol: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// generic, bandpass, neardelta or neardelta:<spread>.
    #[arg(long)]
    pub family: Option<String>,
    /// Observation file; a0.txt, x0.txt and gen.meta go next to it.
    #[arg(short = 'o', long)]
    pub output: Option<String>,
}

#[derive(Args, Debug)]
pub struct DeconvArgs {
    #[command(flatten)]
    pub common: Common,
    /// Observation file (one value per line).
    #[arg(short = 'i', long)]
    pub input: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Ground-truth kernel used for scoring.
    #[arg(long)]
    pub truth: Option<String>,
    /// 1-based start of the initialization window; drawn from the seed when absent.
    #[arg(long)]
    pub init_window: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Also write the optimizer trace as trace.csv.
    #[arg(long)]
    pub trace: bool,
    /// Also solve for the activation and write x_hat.txt.
    #[arg(long)]
    pub activation: bool,
    #[arg(long)]
    pub outdir: Option<String>,
}

#[derive(Args, Debug)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Observation file.
    #[arg(short = 'i', long)]
    pub input: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Ground-truth kernel; enables the region and classification columns.
    #[arg(long)]
    pub truth: Option<String>,
    /// File with one point per row (k values separated by spaces or commas).
    #[arg(long)]
    pub points: Option<String>,
    /// Number of uniformly random points, used when no points file is given.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub c_star: Option<f64>,
    #[arg(long)]
    pub outdir: Option<String>,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub k: Option<List<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub family: Option<String>,
    /// Append the asymptotic prediction columns.
    #[arg(long)]
    pub predictions: bool,
    #[command(flatten)]
    pub workers: Workers,
    #[arg(long)]
    pub outdir: Option<String>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub k: Option<List<usize>>,
    /// Rates `0.05,0.1`, overlap ratios `overlap:0.5,1,2`, or `power:-0.6667` for θ = k^p.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    #[arg(long)]
    pub m: Option<List<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub family: Option<String>,
    /// Refuse grids whose estimated cost exceeds this many flops.
    #[arg(long)]
    pub budget: Option<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub workers: Workers,
    #[arg(long)]
    pub outdir: Option<String>,
}

#[derive(Args, Debug)]
pub struct InitrateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub k: Option<List<usize>>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<String>,
    #[arg(long)]
    pub m: Option<List<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub c_star: Option<f64>,
    #[command(flatten)]
    pub workers: Workers,
    #[arg(long)]
    pub outdir: Option<String>,
}

#[derive(Args, Debug)]
pub struct ConcArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub m: Option<List<usize>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub c_star: Option<f64>,
    /// Total rejection-sampling attempts for the region samples.
    #[arg(long)]
    pub attempt_cap: Option<usize>,
    #[command(flatten)]
    pub workers: Workers,
    #[arg(long)]
    pub outdir: Option<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Deconv(a) => commands::deconv(a),
        Command::Landscape(a) => commands::landscape(a),
        Command::Params(a) => commands::params(a),
        Command::Grid(a) => commands::grid(a),
        Command::Initrate(a) => commands::initrate(a),
        Command::Conc(a) => commands::conc(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
