//! `tcsde`: command-line front end for simulating time-changed SDEs and
//! measuring the strong convergence of the equidistant Euler-Maruyama scheme.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tcsde::Profile;

/// Exit code for invalid configuration (also used by clap for bad flags).
const EXIT_CONFIG: u8 = 2;
/// Exit code for numerical failures inside a simulation.
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "tcsde",
    version,
    about = "Time-changed SDE simulation and strong convergence studies"
)]
struct Cli {
    /// Worker threads (default: all available cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample one stable subordinator path, or its inverse, on a grid.
    Simulate(SimulateArgs),
    /// Solve one realization of a built-in system with the scheme.
    Solve(SolveArgs),
    /// Run strong convergence studies over one or more alpha values.
    Converge(ConvergeArgs),
    /// Check moments of inverse subordinator increments against their bounds.
    VerifyMoments(VerifyMomentsArgs),
    /// Regenerate the full set of convergence tables and plot data.
    Repro(ReproArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    /// Step of the subordinator grid.
    #[arg(long, default_value_t = 1.0 / 1024.0)]
    delta: f64,
    /// Physical time horizon; the path runs until D exceeds it.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Realization index under the seed.
    #[arg(long, default_value_t = 0)]
    realization: u64,
    /// Output grid spacing (default: the subordinator step).
    #[arg(long)]
    grid_step: Option<f64>,
    /// Emit the inverse `t,E_tilde` on [0, horizon] instead of `t,D`.
    #[arg(long)]
    inverse: bool,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// One of paper2d, expdecay, geometric.
    #[arg(long, default_value = "paper2d")]
    system: String,
    /// System parameter as key=value, e.g. `--param lambda=2`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    #[arg(long, default_value_t = 1.0 / 1024.0)]
    dt: f64,
    /// Subordinator step (default: dt).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    realization: u64,
    /// Write every grid state instead of the terminal one only.
    #[arg(long)]
    keep_path: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the driving increments `n,t,E,dE,dB_1..dB_m` here.
    #[arg(long)]
    dump_drivers: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    #[arg(long, default_value = "paper2d")]
    system: String,
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    /// Repeat for a sweep.
    #[arg(long, required = true)]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// Realizations (default: from the profile).
    #[arg(long = "M")]
    samples: Option<usize>,
    /// Reference step (default: from the profile).
    #[arg(long)]
    dt_ref: Option<f64>,
    /// Coarsening factors relative to dt_ref.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    ladder: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "TCSDE_OUT_DIR", default_value = "tcsde-out")]
    out_dir: PathBuf,
    /// Permit alpha outside (1/2, 1); such runs are labeled out of theory.
    #[arg(long)]
    allow_out_of_theory: bool,
}

#[derive(Args, Debug)]
struct VerifyMomentsArgs {
    /// Repeat for several alpha values.
    #[arg(long, required = true)]
    alpha: Vec<f64>,
    /// Rows as `a:b:n`, e.g. `--grid 0.5:1:2` (default: 0.5:1 with n = 1, 2, 4).
    #[arg(long)]
    grid: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    /// Subordinator step.
    #[arg(long, default_value_t = 1.0 / 1024.0)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[arg(long, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    #[arg(long, env = "TCSDE_OUT_DIR", default_value = "tcsde-out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the profile's realization count.
    #[arg(long = "M")]
    samples: Option<usize>,
    /// Override the profile's reference step.
    #[arg(long)]
    dt_ref: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Converge(a) => commands::converge(a),
        Command::VerifyMoments(a) => commands::verify_moments(a),
        Command::Repro(a) => commands::repro(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<tcsde::Error>() {
        Some(err) if err.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}
