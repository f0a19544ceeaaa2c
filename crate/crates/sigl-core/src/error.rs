use alloc::string::String;
use core::fmt;

/// Everything in this crate that can fail does so loudly and with context:
/// silent shape coercion or NaN propagation in a training loop costs hours.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shape or dimension mismatch; `op` names the operation, `detail` the offending geometry.
    Dim { op: &'static str, detail: String },
    /// An input that must be non-empty was empty.
    Empty { what: &'static str },
    /// A value that must be finite was NaN or infinite.
    NonFinite { what: &'static str },
    /// A stateful component was used before the state it needs exists
    /// (e.g. eval-mode batch norm before any statistics were recorded).
    NotReady { what: &'static str },
    /// Caption arithmetic parse failure at a byte offset of the input.
    Parse { offset: usize, expected: &'static str },
    /// A term of a caption-arithmetic expression failed to encode.
    EmptyTerm { term: usize },
    /// Sentence interpolation was requested outside of training.
    InterpolationAtEval,
    /// Numerical procedure left its domain (asymmetric covariance, indefinite
    /// matrix, negative distance beyond roundoff, ...).
    Numeric { what: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim { op, detail } => write!(f, "{op}: dimension mismatch: {detail}"),
            Error::Empty { what } => write!(f, "{what} must not be empty"),
            Error::NonFinite { what } => write!(f, "{what} is not finite"),
            Error::NotReady { what } => write!(f, "{what} not ready"),
            Error::Parse { offset, expected } => {
                write!(f, "parse error at byte {offset}: expected {expected}")
            }
            Error::EmptyTerm { term } => {
                write!(f, "expression term {term} contains no tokens")
            }
            Error::InterpolationAtEval => {
                write!(f, "sentence interpolation is a training-only path")
            }
            Error::Numeric { what } => write!(f, "numerical failure: {what}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
