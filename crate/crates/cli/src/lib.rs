//! Command-line front end: ingestion, configuration, the `estimate`,
//! `bounds`, `simulate` and `pretest` workflows, and report rendering.

pub mod config;
pub mod ingest;
pub mod report;
pub mod run;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;
use serde::Serialize;

use crate::config::{resolve, Cli, Command, RunConfig};
use crate::report::{to_json, Report};

/// Errors surfaced to the shell, each with a category and exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
    #[error("{0}")]
    Core(#[from] ordcic::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Internal(_) => "internal",
            CliError::Core(e) => e.category(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "input" => 2,
            "config" => 3,
            "convergence" => 4,
            "infeasible-alpha" => 5,
            _ => 1,
        }
    }
}

fn render<T: Serialize>(cfg: &RunConfig, result: &T, text: String) -> Result<(String, String), CliError> {
    let json = to_json(&Report::new(cfg, result))?;
    Ok((json, text))
}

/// Executes a parsed command and returns the JSON report and text table.
pub fn execute(command: &Command) -> Result<(RunConfig, String, String), CliError> {
    let cfg = resolve(command)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start worker threads: {e}")))?;
    let (json, text) = pool.install(|| match command {
        Command::Estimate(_) => {
            let (r, t) = run::estimate(&cfg)?;
            render(&cfg, &r, t)
        }
        Command::Bounds(_) => {
            let (r, t) = run::bounds(&cfg)?;
            render(&cfg, &r, t)
        }
        Command::Simulate(_) => {
            let (r, t) = run::simulate(&cfg)?;
            render(&cfg, &r, t)
        }
        Command::Pretest(_) => {
            let (r, t) = run::pretest(&cfg)?;
            render(&cfg, &r, t)
        }
    })?;
    Ok((cfg, json, text))
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok((cfg, json, text)) => {
            if let Some(path) = &cfg.output {
                if let Err(e) = std::fs::write(path, &json) {
                    eprintln!("error[input]: cannot write {}: {e}", path.display());
                    return 2;
                }
            }
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let body = if cfg.json { json } else { text };
            let _ = out.write_all(body.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            e.exit_code()
        }
    }
}
