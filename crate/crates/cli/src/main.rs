use std::path::PathBuf;

use clap::Parser;

use tipbrw_cli::{run_path, RunOptions};

/// Monte Carlo experiments on critical branching random walks.
#[derive(Debug, Parser)]
#[command(name = "tipbrw", version)]
struct Args {
    /// TOML run configuration.
    config: PathBuf,
    /// Worker threads (default: TIPBRW_WORKERS, then all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the configured one.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let code = run_path(
        &args.config,
        &RunOptions {
            workers: args.workers,
            out: args.out,
            seed: args.seed,
        },
    );
    std::process::exit(code);
}
