use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported sample rate {0} Hz")]
    UnsupportedSampleRate(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient labeled frames for channel `{channel}` ({class}): need {needed}, found {found}")]
    InsufficientData {
        channel: String,
        class: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("no {0} examples present")]
    MissingClass(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("Newton iteration did not converge after {iterations} iterations (gradient norms: {trace:?})")]
    NewtonNonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("free energy increased at EM iteration {iteration}: {before} -> {after}")]
    BoundViolation {
        iteration: usize,
        before: f64,
        after: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::NewtonNonConvergence { .. } | Error::BoundViolation { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
