//! Command-line front end of the hybrid-noise annealing simulator.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const NUMERICAL: i32 = 2;
    pub const VALIDATION: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] hyqa_core::Error),
    #[error("output {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use hyqa_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Output { .. } => exit::CONFIG,
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Core(e) => match e {
                E::InvalidInstance(_)
                | E::InvalidSchedule(_)
                | E::InvalidBath(_)
                | E::OutOfRange { .. }
                | E::InvalidArgument(_)
                | E::Parse(_)
                | E::Io(_) => exit::CONFIG,
                _ => exit::NUMERICAL,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::CONFIG => "config",
            exit::VALIDATION => "validation",
            _ => "numerical",
        }
    }

    /// Machine-readable error record.
    pub fn record(&self, command: &str) -> ErrorRecord {
        ErrorRecord {
            error: self.kind(),
            command: command.to_string(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub error: &'static str,
    pub command: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Parser)]
#[command(name = "hyqa", version, about = "Open-system dynamics of quantum annealers under hybrid noise")]
pub struct Cli {
    /// TOML run configuration; `HQA_<SECTION>_<KEY>` variables override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for sweep cells.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Anneal times in ms, comma separated.
    #[arg(long, global = true, value_name = "LIST", value_parser = config::parse_list)]
    pub tf_ms: Option<Vec<f64>>,
    /// Bath temperatures in mK, comma separated.
    #[arg(long, global = true, value_name = "LIST", value_parser = config::parse_list)]
    pub temp_mk: Option<Vec<f64>>,
    /// Level pair for `rates`.
    #[arg(long, global = true, value_name = "m,n", value_parser = config::parse_pair)]
    pub pair: Option<[usize; 2]>,
    /// Retained levels K.
    #[arg(long, global = true, value_name = "K")]
    pub levels: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Convolution, time-domain, Redfield and Marcus rates of one pair along s.
    Rates,
    /// Population trajectory of one anneal per (T, t_f).
    Anneal,
    /// Ground-state probability over the T and t_f grids.
    Sweep,
    /// Lowest energy levels along s.
    Spectrum,
    /// Single-qubit relaxation rate against the bias.
    SingleQubit,
    /// Cross-module invariant suite.
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rates => "rates",
            Command::Anneal => "anneal",
            Command::Sweep => "sweep",
            Command::Spectrum => "spectrum",
            Command::SingleQubit => "single-qubit",
            Command::Validate => "validate",
        }
    }
}

impl Cli {
    /// Load the configuration and apply the command-line flags on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(j) = self.jobs {
            cfg.jobs = Some(j);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = &self.tf_ms {
            cfg.run.tf_ms = t.clone();
        }
        if let Some(t) = &self.temp_mk {
            cfg.run.temp_mk = t.clone();
        }
        if let Some(p) = self.pair {
            cfg.run.pair = p;
        }
        if let Some(k) = self.levels {
            cfg.solver.levels = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run `command` with a resolved configuration inside a worker pool of
/// `cfg.jobs` threads. Returns the paths written.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {:?} worker threads: {e}", cfg.jobs)))?;
    pool.install(|| commands::dispatch(command, cfg))
}
