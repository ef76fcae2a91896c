//! The `lqmfpg` command-line front end.

mod commands;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use commands::{cmd_compare_n, cmd_pg, cmd_solve, RunContext};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "lqmfpg", version, about = "Policy gradient for linear-quadratic mean-field control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimal mean-field gains and, per population size, the N-agent optimum
    Solve(CommonArgs),
    /// Policy-gradient runs with convergence traces
    Pg(CommonArgs),
    /// Finite-population feedbacks and costs against the mean-field optimum
    CompareN(CommonArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Experiment configuration file
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides [output] dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides the configured seeds)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; LQMFPG_JOBS takes precedence
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Exit code for an error: 2 for configuration and validation problems,
/// 1 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Validation(_) | Error::NonSymmetric { .. } | Error::Dimension(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn resolve_jobs(flag: Option<usize>) -> Option<usize> {
    std::env::var("LQMFPG_JOBS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .or(flag)
        .filter(|n| *n > 0)
}

pub fn run(cli: Cli) -> i32 {
    let (args, which) = match &cli.command {
        Command::Solve(a) => (a, "solve"),
        Command::Pg(a) => (a, "pg"),
        Command::CompareN(a) => (a, "compare-n"),
    };
    if let Some(n) = resolve_jobs(args.jobs) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = match RunContext::load(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let result = match which {
        "solve" => cmd_solve(&ctx),
        "pg" => cmd_pg(&ctx),
        _ => cmd_compare_n(&ctx),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
