//! Experiment runner behind the `expoloss` binary.
//!
//! Every subcommand resolves its configuration from flags, then applies the
//! optional `--config` JSON document on top, runs, and produces a
//! [`Document`]. Documents are deterministic given the configuration except
//! for the `wall_clock` field.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;
pub mod config;
pub mod document;
pub mod experiment;

use std::path::Path;

pub use args::{Cli, Command};
pub use document::Document;

/// Exit status for a run whose checks passed.
pub const EXIT_OK: i32 = 0;
/// Exit status for a completed run with failed checks or a diverged model.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit status for invalid flags, config files or inputs.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed: {0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_CHECK_FAILED,
        }
    }

    pub(crate) fn context(self, at: &str) -> CliError {
        match self {
            CliError::Config(m) => CliError::Config(format!("{at}: {m}")),
            CliError::Run(m) => CliError::Run(format!("{at}: {m}")),
        }
    }

    /// Machine-readable form printed to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Run(m) => ("run", m),
        };
        serde_json::json!({ "error": kind, "message": message, "exit_code": self.exit_code() })
    }
}

impl From<expoloss::Error> for CliError {
    fn from(e: expoloss::Error) -> Self {
        match e {
            expoloss::Error::Diverged { .. } => CliError::Run(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// What a command produced: its result document (none for CSV output) plus
/// any failed checks.
#[derive(Debug)]
pub struct Outcome {
    pub document: Option<Document>,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

/// Caps the global rayon pool at `RL_THREADS` when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("RL_THREADS='{raw}' is not a thread count")))?;
    if n == 0 {
        return Err(CliError::Config("RL_THREADS must be at least 1".into()));
    }
    // a second initialisation in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub(crate) fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::TransformPlot(a) => commands::transform_plot(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Train(a) => commands::train(a),
        Command::NoiseBench(a) => commands::noise_bench(a),
        Command::Bounds(a) => commands::bounds(a),
        Command::Lemma2Mc(a) => commands::lemma2_mc(a),
    }
}
