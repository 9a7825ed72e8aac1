//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// One offending coordinate from a failed gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckFailure {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug)]
pub enum Error {
    /// Shape or axis mismatch between operands.
    Dim(String),
    /// Non-finite value where a finite one is required.
    Numeric(String),
    /// Projection of a point at or behind the camera plane.
    BehindCamera {
        depth: f64,
    },
    /// Gradient check exceeded its tolerance.
    CheckFailed {
        op: String,
        failures: Vec<CheckFailure>,
    },
    /// Invalid scene specification.
    Spec(String),
    /// Malformed config text.
    Config(String),
    /// Malformed binary or text file payload.
    Format(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(msg) => write!(f, "dimension error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::BehindCamera { depth } => {
                write!(f, "point at or behind camera plane (depth {depth:e})")
            }
            Error::CheckFailed { op, failures } => {
                write!(
                    f,
                    "gradient check failed for {op}: {} coordinate(s) over tolerance",
                    failures.len()
                )?;
                for c in failures.iter().take(8) {
                    write!(
                        f,
                        "\n  input {} coord {}: analytic {:+.9e} numeric {:+.9e} rel {:.3e}",
                        c.input, c.coord, c.analytic, c.numeric, c.rel_err
                    )?;
                }
                if failures.len() > 8 {
                    write!(f, "\n  ... and {} more", failures.len() - 8)?;
                }
                Ok(())
            }
            Error::Spec(msg) => write!(f, "scene spec error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

/// Shorthand for `Error::Dim` with formatted context.
macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dim(format!($($arg)*))
    };
}
pub(crate) use dim_err;
