//! Batch front end for the `trajex` library: configuration, the
//! `simulate | extremes | mc | compare | slice` commands and the run manifest.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure (an
//! integration failed or an optimizer did not converge), 4 the sampling
//! oracle lost more than 1% of its samples.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Run(trajex::Error),
    #[error("{0} trust-region problems did not converge")]
    NotConverged(usize),
    #[error("oracle failed on {failed} of {total} samples")]
    Oracle { failed: usize, total: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<trajex::Error> for CliError {
    fn from(e: trajex::Error) -> Self {
        use trajex::Error as E;
        match e {
            E::Config(_)
            | E::InvalidBox(_)
            | E::UnknownState(_)
            | E::DataFileMissing(_)
            | E::DataFormat { .. }
            | E::NotOneDimensional(_)
            | E::GridMismatch => CliError::Config(e.to_string()),
            E::Io(m) => CliError::Io(m),
            other => CliError::Run(other),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Run(_) | CliError::NotConverged(_) => 3,
            CliError::Oracle { .. } => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Integrate one parameter point and write every state.
    Simulate,
    /// Trust-region (or Taylor baseline) envelope of one state.
    Extremes,
    /// Sampling envelope (grid or seeded uniform).
    Mc,
    /// Relative envelope errors of each method against the sampling oracle.
    Compare,
    /// Empirical value of one state at one time across a 1-D box.
    Slice,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Extremes => "extremes",
            Command::Mc => "mc",
            Command::Compare => "compare",
            Command::Slice => "slice",
        }
    }
}

/// Runs `cmd` on the configured worker pool and writes the manifest.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    let result = trajex::par::with_jobs(cfg.jobs, || match cmd {
        Command::Simulate => commands::simulate(cfg),
        Command::Extremes => commands::extremes(cfg),
        Command::Mc => commands::mc(cfg),
        Command::Compare => commands::compare(cfg),
        Command::Slice => commands::slice(cfg),
    });
    let outputs = result.as_ref().map(Vec::clone).unwrap_or_default();
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("failed (exit {}): {e}", e.exit_code()),
    };
    write_manifest(&cfg.out_dir, cmd, cfg, &outputs, &status)?;
    result
}

fn write_manifest(dir: &Path, cmd: Command, cfg: &RunConfig, outputs: &[PathBuf], status: &str) -> Result<(), CliError> {
    let path = dir.join("run_manifest.txt");
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut f = std::fs::File::create(&path).map_err(io)?;
    let mut text = String::new();
    text.push_str(&format!("command = {}\n", cmd.name()));
    text.push_str(&format!("status = {status}\n"));
    text.push_str(&format!("config_sha256 = {}\n", cfg.hash()));
    text.push_str(&format!("seed = {}\n", cfg.sampling.seed));
    text.push_str(&format!("samples = {}\n", cfg.sampling.count));
    text.push_str(&format!("trajex_version = {}\n", trajex::VERSION));
    text.push_str(&format!("cli_version = {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("parallel = {}\n", trajex::par::PARALLEL_AVAILABLE));
    text.push_str(&format!("jobs = {}\n", cfg.jobs.map_or("auto".to_string(), |j| j.to_string())));
    for o in outputs {
        text.push_str(&format!("output = {}\n", o.display()));
    }
    text.push_str("\n[config]\n");
    text.push_str(&cfg.to_toml());
    f.write_all(text.as_bytes()).map_err(io)
}
