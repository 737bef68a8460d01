use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid peptide: {0}")]
    InvalidPeptide(String),
    #[error("invalid charge: {0}")]
    InvalidCharge(i64),
    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },
    #[error("duplicate label for run {run_id}, scan {scan_id}, task {task}")]
    DuplicateLabel {
        run_id: String,
        scan_id: String,
        task: String,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("empty spectrum: {0}")]
    EmptySpectrum(String),
    #[error("numeric error in {0}")]
    Numeric(String),
    #[error("token not in vocabulary: {0}")]
    Vocab(String),
    #[error("degenerate validation set: {0}")]
    DegenerateValidation(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input data rather than bad usage or configuration.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}
