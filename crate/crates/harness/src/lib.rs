//! Benchmark harness: dataset ingestion, the resumable attack job matrix,
//! persisted results and report generation.

pub mod config;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod layout;
pub mod ledger;
pub mod matrix;
pub mod report;

pub use config::{load_config, parse_config, resolve, ResolvedConfig, RunConfig};
pub use error::{exit, HarnessError, Result};
pub use matrix::{load_datasets, run_matrix, JobFilter, RunOptions, RunSummary};
pub use report::{build_report, evaluate, render, write_report, Evaluation, Report};
