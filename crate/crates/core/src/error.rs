use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("degenerate benchmark: module {module} has zero {quantity} averaged over all scenarios")]
    DegenerateBenchmark { module: usize, quantity: &'static str },

    #[error("conditional module distribution undefined for scenario {scenario}: total accident probability is zero")]
    UndefinedConditional { scenario: usize },

    #[error("skewness undefined: sample variance is zero")]
    UndefinedSkewness,

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("degenerate mixture: conditional variance {0} is not positive")]
    DegenerateMixture(f64),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: line {line}, column {column}: {message}")]
    ConfigSyntax {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a prefix naming where it happened (a config path, a cell label).
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
