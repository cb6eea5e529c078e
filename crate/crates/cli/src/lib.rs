//! Configuration-driven experiment runner for the `sqopt` library.

use std::io::Write;
use std::path::PathBuf;

pub mod config;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run_config, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Schema(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Library(#[from] sqopt::SqError),
    #[error("no reports to emit")]
    EmptyReport,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub const COLUMNS: [&str; 11] =
    ["task", "d", "q/p", "eps", "tolerance", "vstat_n", "queries", "achieved", "certified", "seed", "ms"];

/// Writes one CSV row per report under a fixed header.
pub fn emit_report<W: Write>(reports: &[RunReport], sink: W) -> Result<(), CliError> {
    if reports.is_empty() {
        return Err(CliError::EmptyReport);
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(COLUMNS)?;
    for r in reports {
        let tolerance = if r.tolerance.is_finite() { r.tolerance.to_string() } else { String::new() };
        let vstat = if r.vstat_n > 0.0 { r.vstat_n.to_string() } else { String::new() };
        w.write_record([
            r.task.clone(),
            r.dim.to_string(),
            r.q.to_string(),
            r.eps.to_string(),
            tolerance,
            vstat,
            r.queries.to_string(),
            r.achieved.to_string(),
            r.certified.to_string(),
            r.seed.to_string(),
            format!("{:.3}", r.ms),
        ])?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

/// [`emit_report`] into a file, with the path attached to write failures.
pub fn emit_report_to(reports: &[RunReport], path: &std::path::Path) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    emit_report(reports, file).map_err(|e| match e {
        CliError::Csv(c) => CliError::Io { path: path.to_path_buf(), source: std::io::Error::other(c.to_string()) },
        other => other,
    })
}
