//! Command-line front end for the `fairshift` library.
//!
//! Two entry points:
//!
//! * `analyze` ingests a CSV of observations, fits nuisances once, and
//!   reports interventional-mean estimates for a set of shift families,
//!   with contrasts against a benchmark arm.
//! * `experiment` runs one of the built-in simulation studies and reports
//!   its gate results.
//!
//! Both write a machine-readable JSON report plus an aligned plain-text
//! table into an output directory, atomically (write-temp-then-rename).
//! With a fixed seed the JSON report is byte-identical across runs and
//! thread counts, except for the `runtime_ms` field.
//!
//! Exit codes: 0 success (all gates pass), 1 runtime or gate failure,
//! 2 usage or schema error.

pub mod ingest;
pub mod report;
pub mod runner;

/// Everything that can go wrong on a run, bucketed by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed CSV: bad UTF-8, ragged rows, unparseable fields.
    #[error("parse error: {0}")]
    Parse(String),
    /// The data disagrees with the request: missing or overlapping
    /// columns, unknown labels, empty input.
    #[error("schema error: {0}")]
    Schema(String),
    /// Bad flag values or flag combinations the parser itself accepts.
    #[error("usage error: {0}")]
    Usage(String),
    /// The request was well-formed but the run failed (fit or estimation
    /// failure, unwritable output).
    #[error("run failed: {0}")]
    Run(String),
}

impl CliError {
    /// Process exit code for this error.
    ///
    /// Parse, schema, and usage problems are invocation errors (2); a
    /// well-formed run that fails mid-flight is a runtime failure (1).
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Schema(_) | CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}
