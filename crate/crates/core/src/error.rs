use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spectral profile: {0}")]
    InvalidProfile(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("malformed frame stream at byte offset {offset}{}: {message}", frame_suffix(*.frame))]
    FrameFormat {
        frame: Option<u64>,
        offset: u64,
        message: String,
    },

    #[error(transparent)]
    Fit(#[from] FitError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn frame_suffix(frame: Option<u64>) -> String {
    match frame {
        Some(i) => format!(" (frame {i})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for input/config problems, 2 for runtime and fit failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidProfile(_)
            | Error::Config { .. }
            | Error::Input(_)
            | Error::FrameFormat { .. }
            | Error::Io { .. } => 1,
            Error::Fit(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum FitError {
    #[error("fit did not converge after {iterations} iterations (chi2 = {chi_square:.6e})")]
    NotConverged {
        iterations: usize,
        chi_square: f64,
        residuals: Vec<f64>,
    },

    #[error("degenerate fit: {0}")]
    Degenerate(String),
}
