//! Experiment runner: `parahom run --config <path>`, `parahom validate
//! --config <path>`, `parahom list-experiments`. Worker count comes from
//! `--workers` or the `PARAHOM_WORKERS` environment variable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use parahom::experiments::{self, ExperimentConfig, ExperimentName};

#[derive(Parser)]
#[command(
    name = "parahom",
    version,
    about = "homogenization laboratory for random parabolic lattice equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment end to end and write CSVs plus a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: PARAHOM_WORKERS or all CPUs).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the experiment names this binary understands.
    ListExperiments,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            workers,
        } => {
            let mut cfg = match ExperimentConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(4);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o.display().to_string();
            }
            let diags = experiments::validate(&cfg);
            if !diags.is_empty() {
                for d in &diags {
                    eprintln!("config error: {d}");
                }
                return ExitCode::from(4);
            }
            let workers = workers.unwrap_or_else(experiments::workers_from_env);
            match experiments::run(&cfg, workers) {
                Ok(outcome) => {
                    println!(
                        "{}: {} ({:.1}s, artifacts in {})",
                        cfg.experiment,
                        outcome.manifest.verdict,
                        outcome.manifest.wall_clock_secs,
                        outcome.out_dir.display()
                    );
                    for line in &outcome.manifest.summary {
                        println!("  {line}");
                    }
                    ExitCode::from(outcome.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Validate { config } => {
            let cfg = match ExperimentConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(4);
                }
            };
            let diags = experiments::validate(&cfg);
            if diags.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                for d in &diags {
                    println!("{d}");
                }
                ExitCode::from(4)
            }
        }
        Command::ListExperiments => {
            for name in ExperimentName::all() {
                println!("{name:<16} {}", name.describe());
            }
            ExitCode::SUCCESS
        }
    }
}
