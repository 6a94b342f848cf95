use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NormNotConverged { iterations: usize, estimate: f64 },

    #[error("analysis operator has zero norm; initialize with a nonzero standard deviation")]
    ZeroAnalysisNorm,

    #[error("parse error in {what} at byte offset {offset}: {message}")]
    Parse {
        what: &'static str,
        offset: usize,
        message: String,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("layer trace missing or inconsistent: {0}")]
    MissingTrace(String),

    #[error("non-finite gradient in layer {layer} ({group})")]
    NonFiniteGradient { layer: usize, group: &'static str },

    #[error("training diverged at iteration {iteration}: loss {loss:e} exceeded 10x the initial loss {initial:e} for {streak} consecutive iterations")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
        streak: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
