mod catalog;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use log::error;
use robench_harness::config::ResolvedConfig;
use robench_harness::report::{build_report, evaluate};
use robench_harness::{exit, load_config, load_datasets, run_matrix, write_report, HarnessError, JobFilter, RunOptions};
use serde_json::json;

/// Adversarial robustness benchmark for differentiable image-quality metrics.
///
/// Machine-readable summaries go to stdout as JSON; progress goes to stderr.
/// Exit codes: 0 success, 2 configuration error, 3 partial failure.
#[derive(Parser)]
#[command(name = "robench", version)]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file, ingest its datasets and print the config digest.
    ValidateConfig {
        /// Run configuration (TOML).
        config: PathBuf,
    },
    /// Run (or resume) the whole job matrix.
    Run {
        /// Run configuration (TOML).
        config: PathBuf,
        #[command(flatten)]
        limits: Limits,
    },
    /// Run one metric against one attack on one test dataset.
    Attack {
        /// Run configuration (TOML).
        config: PathBuf,
        /// Metric name as listed in the config.
        #[arg(long)]
        metric: String,
        /// Attack label (the kind, unless the config sets `label`).
        #[arg(long)]
        attack: String,
        /// Test dataset id.
        #[arg(long)]
        dataset: String,
        #[command(flatten)]
        limits: Limits,
    },
    /// Train universal perturbations only.
    TrainUap {
        /// Run configuration (TOML).
        config: PathBuf,
        /// Only this metric.
        #[arg(long)]
        metric: Option<String>,
        /// Only this universal attack label.
        #[arg(long)]
        attack: Option<String>,
        /// Only this training dataset id.
        #[arg(long)]
        trainset: Option<String>,
        #[command(flatten)]
        limits: Limits,
    },
    /// Recompute robustness measures from persisted results into `<run>/eval.json`.
    Evaluate {
        #[command(flatten)]
        source: Source,
    },
    /// Write the report tables (CSV and JSON).
    Report {
        #[command(flatten)]
        source: Source,
        /// Output directory (default: `<run>/report`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the attack and metric catalog, or the manual page.
    Catalog {
        /// Output format.
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

#[derive(clap::Args)]
struct Limits {
    /// Stop after computing this many jobs; rerun to resume.
    #[arg(long, value_name = "N")]
    max_jobs: Option<usize>,
    /// Worker threads (overrides the config and ROBENCH_WORKERS).
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(clap::Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Config file whose output directory holds the run.
    config: Option<PathBuf>,
    /// Run directory to read directly.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// The attack catalog (`docs/attacks.md`).
    Markdown,
    /// The attack catalog as JSON.
    Json,
    /// The manual page (`docs/robench.md`).
    Man,
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn load(path: &Path, workers: Option<usize>) -> robench_harness::Result<ResolvedConfig> {
    let mut cfg = load_config(path)?;
    if let Some(w) = workers {
        if w == 0 {
            return Err(HarnessError::config("--workers", "must be at least 1"));
        }
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run_dir(source: &Source) -> robench_harness::Result<PathBuf> {
    match (&source.run_dir, &source.config) {
        (Some(d), _) => Ok(d.clone()),
        (None, Some(c)) => Ok(load_config(c)?.output_dir),
        (None, None) => unreachable!("clap requires one source"),
    }
}

fn execute(command: Command) -> robench_harness::Result<i32> {
    match command {
        Command::ValidateConfig { config } => {
            let cfg = load(&config, None)?;
            let datasets = load_datasets(&cfg)?;
            let manifest = robench_harness::layout::RunManifest::new(&cfg);
            let mut summaries = Vec::new();
            let mut problems = Vec::new();
            for d in &cfg.config.datasets {
                match &datasets[&d.id] {
                    Ok(s) => summaries.push(serde_json::to_value(s.summary())?),
                    Err(e) => problems.push(e.clone()),
                }
            }
            let code = if problems.is_empty() { exit::SUCCESS } else { exit::PARTIAL };
            print(&json!({
                "config_digest": cfg.digest,
                "valid": true,
                "datasets": summaries,
                "dataset_errors": problems,
                "uap_jobs": manifest.uap_jobs().len(),
                "cells": manifest.cells.len(),
                "workers": cfg.workers,
            }));
            Ok(code)
        }
        Command::Run { config, limits } => run(&config, &limits, JobFilter::default()),
        Command::Attack {
            config,
            metric,
            attack,
            dataset,
            limits,
        } => {
            let filter = JobFilter {
                metric: Some(metric),
                attack: Some(attack),
                dataset: Some(dataset),
                ..Default::default()
            };
            run(&config, &limits, filter)
        }
        Command::TrainUap {
            config,
            metric,
            attack,
            trainset,
            limits,
        } => {
            let filter = JobFilter {
                metric,
                attack,
                trainset,
                uap_only: true,
                ..Default::default()
            };
            run(&config, &limits, filter)
        }
        Command::Evaluate { source } => {
            let dir = run_dir(&source)?;
            let ev = evaluate(&dir)?;
            let report = build_report(&ev)?;
            let path = dir.join("eval.json");
            let mut bytes = serde_json::to_vec_pretty(&json!({
                "config_digest": report.config_digest,
                "complete": report.complete,
                "skipped": report.skipped,
                "cells": report.cells,
            }))?;
            bytes.push(b'\n');
            robench_harness::ledger::write_atomic(&path, &bytes)?;
            print(&json!({
                "config_digest": report.config_digest,
                "complete": report.complete,
                "cells": report.cells.len(),
                "skipped": report.skipped.len(),
                "output": path.display().to_string(),
            }));
            Ok(if report.complete { exit::SUCCESS } else { exit::PARTIAL })
        }
        Command::Report { source, out } => {
            let dir = run_dir(&source)?;
            let summary = write_report(&dir, out.as_deref())?;
            let code = if summary.complete { exit::SUCCESS } else { exit::PARTIAL };
            print(&serde_json::to_value(&summary)?);
            Ok(code)
        }
        Command::Catalog { format } => {
            match format {
                Format::Markdown => print!("{}", catalog::markdown()),
                Format::Json => print(&serde_json::to_value(catalog::catalog())?),
                Format::Man => print!("{}", catalog::manual(Cli::command())),
            }
            Ok(exit::SUCCESS)
        }
    }
}

fn run(config: &Path, limits: &Limits, filter: JobFilter) -> robench_harness::Result<i32> {
    let cfg = load(config, limits.workers)?;
    let opts = RunOptions {
        max_jobs: limits.max_jobs,
        filter,
    };
    let summary = run_matrix(&cfg, &opts)?;
    print(&serde_json::to_value(&summary)?);
    Ok(summary.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, _) => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .init();
    let code = match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            let key = match &e {
                HarnessError::Config { key, .. } => Some(key.clone()),
                _ => None,
            };
            print(&json!({ "error": e.to_string(), "key": key, "exit_code": e.exit_code() }));
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
