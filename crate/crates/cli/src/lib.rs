//! Command-line front end: input files, the analysis pipeline, reports and
//! trajectory export.

pub mod export;
pub mod input;
pub mod pipeline;
pub mod report;

use thiserror::Error;

pub use export::{export_trajectory, ExportError};
pub use input::{parse_input, InputError, ParsedInput};
pub use pipeline::{run_analysis, run_certificate, AnalysisOptions, PipelineError};
pub use report::{verdict, AnalysisReport, CertificateReport, Verdict};

/// A certificate was found and every trajectory check passed.
pub const EXIT_CERTIFIED: i32 = 0;
pub const EXIT_INCONCLUSIVE: i32 = 2;
/// Unreadable or malformed input, invalid arguments, or unwritable output.
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(#[from] InputError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Export(#[from] ExportError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) | Self::Usage(_) => EXIT_INPUT,
            Self::Export(ExportError::Io { .. }) => EXIT_INPUT,
            Self::Pipeline(_) | Self::Export(_) => EXIT_NUMERICAL,
        }
    }
}

pub fn verdict_exit_code(verdict: Verdict) -> i32 {
    if verdict.is_certified() {
        EXIT_CERTIFIED
    } else {
        EXIT_INCONCLUSIVE
    }
}
