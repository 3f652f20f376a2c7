//! Batch runner for obstacle-problem studies: solve a configured problem,
//! audit its structural hypotheses, extract and classify the free boundary,
//! and write machine-readable artifacts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver non-convergence,
//! 4 hypothesis violation under `--strict`.

mod config;
mod emit;
mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "freebd", version, about = "Obstacle-problem solver and free-boundary analyzer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the configured problem and write solution.csv, freeboundary.json
    /// and report.json into the output directory.
    Run {
        config: PathBuf,
        /// Fail (exit 4) on hypothesis violations instead of warning.
        #[arg(long)]
        strict: bool,
    },
    /// Check the structural hypotheses of the configured energy without
    /// solving anything.
    Check {
        config: PathBuf,
        /// Fail (exit 4) on hypothesis violations instead of warning.
        #[arg(long)]
        strict: bool,
    },
    /// Solve on a ladder of dyadic refinements and tabulate errors against
    /// the finest level with measured convergence orders.
    Study {
        config: PathBuf,
        /// Number of refinement levels, at least 3.
        #[arg(long)]
        levels: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run { config, strict } => pipeline::run(&config, strict),
        Cmd::Check { config, strict } => pipeline::check(&config, strict),
        Cmd::Study { config, levels } => pipeline::study(&config, levels),
    };
    std::process::exit(code);
}
