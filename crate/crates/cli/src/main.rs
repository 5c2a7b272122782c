//! Experiment runner CLI: validate CSVs, run the configured method
//! categories, compare WAETL distance functions and re-render saved
//! artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use fincast_core::experiment::{
    compare_distances, render_artifact_json, render_distance_table, render_table, run_experiment,
    validate_csvs, ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "fincast",
    version,
    about = "Multi-source transfer learning for stock-price forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate all configured CSV files.
    Ingest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured experiment and write the report table + JSON.
    Run(RunArgs),
    /// Evaluate WAETL under all four distance functions on a shared pool.
    CompareDistances(RunArgs),
    /// Re-render a JSON artifact to its plain-text table.
    Report {
        /// Path to a previously written artifact JSON.
        artifact: PathBuf,
        /// Optional file to write the table to (stdout otherwise).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { config } => {
            let cfg = load_config(&config, None)?;
            for s in validate_csvs(&cfg)? {
                println!(
                    "OK {sym:<10} rows={rows:<6} {first}..{last}  ({path})",
                    sym = s.symbol,
                    rows = s.rows,
                    first = s.first,
                    last = s.last,
                    path = s.path
                );
            }
            Ok(())
        }
        Command::Run(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            let output = run_experiment(&cfg, &args.out)?;
            print!("{}", render_table(&output.rows));
            println!("wrote {}", output.artifact_path.display());
            println!("wrote {}", output.table_path.display());
            Ok(())
        }
        Command::CompareDistances(args) => {
            let cfg = load_config(&args.config, args.seed)?;
            let output = compare_distances(&cfg, &args.out)?;
            print!("{}", render_distance_table(&output.rows));
            println!("wrote {}", output.artifact_path.display());
            println!("wrote {}", output.table_path.display());
            Ok(())
        }
        Command::Report { artifact, out } => {
            let text = std::fs::read_to_string(&artifact)
                .with_context(|| format!("reading {}", artifact.display()))?;
            let table = render_artifact_json(&text)?;
            match out {
                Some(path) => std::fs::write(&path, &table)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{table}"),
            }
            Ok(())
        }
    }
}
