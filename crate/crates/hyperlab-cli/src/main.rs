//! `hyperlab`: command-line driver for the random-walk experiments.

mod commands;
mod config;
mod error;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hyperlab::boundary_operators::MatrixCache;
use hyperlab::llt_lab::DEFAULT_SEED;

use crate::commands::RunFlags;
use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Environment variable overriding the operator-matrix cache directory.
const CACHE_ENV: &str = "HYPERLAB_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "hyperlab", version, about = "Transfer operators and local limit experiments for random walks on SL(2,R)")]
struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Neither read nor write the operator-matrix cache.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the Iwasawa and Cartan factors of a 2x2 matrix such as "[[1,0],[1,1]]".
    Decompose { matrix: String },
    /// Perron data, the lambda(r) curve and the limit constants.
    Spectrum {
        config: PathBuf,
        /// Override `[output].directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence of the rescaled walk averages to the limit.
    Llt {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip Monte Carlo sampling.
        #[arg(long)]
        no_mc: bool,
    },
    /// Stationary boundary density, its Fourier decay and the high-mode curves.
    Furstenberg {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the fast invariant suite and print a pass/fail table.
    Selftest {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(dir) = out {
        cfg.output.directory = dir;
    }
    Ok(cfg)
}

fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    match std::env::var_os("XDG_CACHE_HOME").or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".cache").into_os_string())) {
        Some(base) => PathBuf::from(base).join("hyperlab"),
        None => std::env::temp_dir().join("hyperlab-cache"),
    }
}

fn flags(no_cache: bool, no_mc: bool) -> Result<RunFlags, CliError> {
    let cache = if no_cache { None } else { Some(MatrixCache::new(cache_dir())?) };
    Ok(RunFlags { cache, no_mc })
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    match cli.command {
        Command::Decompose { matrix } => commands::decompose(&matrix),
        Command::Spectrum { config, out } => {
            let cfg = load(&config, out)?;
            commands::spectrum(&cfg, &flags(cli.no_cache, false)?)
        }
        Command::Llt { config, out, no_mc } => {
            let cfg = load(&config, out)?;
            commands::llt(&cfg, &flags(cli.no_cache, no_mc)?)
        }
        Command::Furstenberg { config, out } => {
            let cfg = load(&config, out)?;
            commands::furstenberg(&cfg, &flags(cli.no_cache, false)?)
        }
        Command::Selftest { seed } => selftest::run(seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hyperlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
