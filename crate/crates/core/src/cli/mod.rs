//! Command-line front end: `solve`, `verify`, `oracle`, `rollout`, `compare`.

mod commands;
pub mod manifest;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use manifest::{RunManifest, MANIFEST_VERSION};

use crate::error::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_VIOLATION: u8 = 4;
pub const EXIT_NO_ORACLE: u8 = 5;

const EXIT_HELP: &str = "Exit codes: 0 success, 1 runtime failure, 2 config or selector error, \
3 training divergence, 4 inequality violation, 5 no oracle applies.\n\
Log verbosity is read from SOFT_HJB_LOG (error, warn, info, debug, trace).";

#[derive(Debug, Parser)]
#[command(name = "soft-hjb", version, about = "Soft policy iteration for entropy-regularized stochastic control", after_help = EXIT_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps the worker threads used for Monte Carlo rollouts.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single worker thread unless `--threads` is given; results are then
    /// reproducible bit for bit.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs PINN soft policy iteration.
    #[command(after_help = "Outputs: manifest.json, ledger.csv (n,L_value,L_policy,step8_metric,reward_estimate,\
q_norm,r_norm,oracle_l2,reward_stderr), loss_history.csv (iteration,net,epoch,loss), \
checkpoints/iter_NNN.json, convergence.svg")]
    Solve {
        /// Rerun from a manifest written by an earlier `solve`.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
    },
    /// Checks the analytical inequalities numerically.
    #[command(after_help = "Outputs: lemma_<id>.csv (trial,lhs,rhs,slack) per check, summary.json, manifest.json")]
    Verify {
        /// One of 1, 2, 3, prop1, pinsker, all.
        #[arg(long)]
        lemma: String,
        /// Trials per check; each check has its own default.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Exact soft policy iteration on a finite-difference grid (1D/2D).
    #[command(after_help = "Outputs: nodal.csv (x1[,x2],v), convergence.csv (n,increment), convergence.svg, \
summary.json, manifest.json")]
    Oracle {
        /// Problem configuration; same as `--config`.
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Nodes per axis.
        #[arg(long)]
        grid_n: Option<usize>,
    },
    /// Monte Carlo evaluation of a checkpointed policy.
    #[command(after_help = "Outputs: eval.csv (path,reward), summary.json, manifest.json")]
    Rollout {
        /// Checkpoint written by `solve`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of sample paths
        #[arg(long)]
        paths: Option<usize>,
        /// Euler–Maruyama time step
        #[arg(long)]
        dt: Option<f64>,
        /// Horizon.
        #[arg(long = "T")]
        horizon: Option<f64>,
    },
    /// Compares a checkpointed value against the FD oracle or the Riccati baseline.
    #[command(after_help = "Outputs: compare.json, overlay.svg, manifest.json")]
    Compare {
        /// Checkpoint written by `solve`
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("no oracle applies: {0}")]
    NoOracle(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => EXIT_CONFIG,
            CliError::NoOracle(_) => EXIT_NO_ORACLE,
            CliError::Core(Error::Divergence { .. }) => EXIT_DIVERGED,
            CliError::Core(_) => EXIT_FAILURE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn init_logging() {
    let env = env_logger::Env::new().filter_or("SOFT_HJB_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp_millis().try_init();
}

fn init_threads(global: &GlobalArgs) {
    let threads = match (global.threads, global.deterministic) {
        (Some(t), _) => t.max(1),
        (None, true) => 1,
        (None, false) => return,
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::debug!("thread pool already initialised: {e}");
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    init_logging();
    init_threads(&cli.global);
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Solve { manifest } => commands::solve(g, manifest.as_deref()),
        Command::Verify { lemma, trials } => commands::verify(g, lemma, *trials),
        Command::Oracle { problem, grid_n } => commands::oracle(g, problem.as_deref(), *grid_n),
        Command::Rollout { checkpoint, paths, dt, horizon } => commands::rollout(g, checkpoint, *paths, *dt, *horizon),
        Command::Compare { checkpoint } => commands::compare(g, checkpoint),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Core(Error::Config("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Core(Error::Divergence { epoch: 1, loss: f64::NAN }).exit_code(), EXIT_DIVERGED);
        assert_eq!(CliError::NoOracle("d = 3".into()).exit_code(), EXIT_NO_ORACLE);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run_from(["soft-hjb", "verify", "--bogus"]), EXIT_CONFIG);
    }
}
