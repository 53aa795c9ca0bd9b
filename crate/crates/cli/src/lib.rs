//! Command-line harness: partition, cluster, evaluate, generate data and
//! run benchmark matrices.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod bench;
pub mod commands;
pub mod record;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dcc::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Spec { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for bad input, 2 for failures at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Usage(_) | CliError::Spec { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        CliError::Csv {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dcc", version, about = "Divide-compress-and-conquer clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Divide and compress a data set into a signature file.
    Partition(commands::PartitionArgs),
    /// Cluster a data set and write a result file.
    Cluster(commands::ClusterArgs),
    /// Score predicted labels against a labeled data set.
    Eval(commands::EvalArgs),
    /// Run a benchmark matrix described by a TOML spec.
    Bench(bench::BenchArgs),
    /// Write a synthetic data set as CSV.
    Generate(commands::GenerateArgs),
}

/// Input file options shared by commands that read a data set.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// CSV data file.
    #[arg(long)]
    pub input: PathBuf,
    /// Label column, by header name or 0-based index.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Center and scale every feature column.
    #[arg(long)]
    pub standardize: bool,
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Partition(a) => commands::partition(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => bench::bench(&a),
        Command::Generate(a) => commands::generate(&a),
    }
}
