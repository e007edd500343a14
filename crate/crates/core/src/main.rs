use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nonident::runio::{self, CellFilter, ExperimentConfig, ValidationOptions};
use nonident::SamplerKind;

/// Posterior non-identifiability laboratory for one-hidden-layer ReLU networks.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overwrite existing artifacts and rerun completed cells.
    #[arg(long, global = true)]
    force: bool,

    /// Restrict to grid cells, e.g. `n=4096,M=10`; repeatable.
    #[arg(long, global = true, value_name = "n=...,M=...")]
    cells: Vec<CellFilter>,

    /// Sampler kind (hmc, sgld, manifold), overriding the config.
    #[arg(long, global = true)]
    sampler: Option<SamplerKind>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the ground truth, training sets and test set.
    Generate,
    /// Run the chains of every selected grid cell.
    Sample,
    /// Compute the report tables from the trace files.
    Diagnose,
    /// Run the closed-form self-checks.
    Validate {
        #[arg(long, hide = true)]
        inject_wrong_mu: bool,
    },
    /// Print a summary of the report tables.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(kind) = cli.sampler {
        cfg.sampler = kind;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Generate => {
            let cfg = load_config(cli)?;
            let out = runio::generate(&cfg, cli.force)?;
            println!("ground truth {}", out.ground_truth.id());
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
        Command::Sample => {
            let cfg = load_config(cli)?;
            let summary = runio::sample(&cfg, &cli.cells, cli.force)?;
            for (n, m) in &summary.cells_skipped {
                println!("skipped n={n} M={m} (complete)");
            }
            for (n, m) in &summary.cells_run {
                println!("sampled n={n} M={m}");
            }
            for (n, m, c, e) in &summary.failures {
                eprintln!("chain {c} of n={n} M={m} failed: {e}");
            }
            Ok(summary.failures.is_empty())
        }
        Command::Diagnose => {
            let cfg = load_config(cli)?;
            let summary = runio::diagnose(&cfg.out_dir)?;
            println!("diagnosed {} cells", summary.cells.len());
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
        Command::Validate { inject_wrong_mu } => {
            let report = runio::validate(&ValidationOptions {
                inject_wrong_mu: *inject_wrong_mu,
            });
            println!("{report}");
            Ok(report.all_passed())
        }
        Command::Report => {
            let cfg = load_config(cli)?;
            print!("{}", runio::report(&cfg.out_dir)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
