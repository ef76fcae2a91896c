use clap::Parser;

use lqmfpg_core::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
