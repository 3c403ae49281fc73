use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised by the numerical routines and the driver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("norm kind mismatch: {left:?} vs {right:?}")]
    NormMismatch {
        left: crate::linop::NormKind,
        right: crate::linop::NormKind,
    },

    #[error("resolvent at mu = {mu} is singular (condition estimate {cond:e})")]
    SingularResolvent { mu: f64, cond: f64 },

    #[error("eigenvalue iteration did not converge within {max_iter} iterations")]
    EigenFailure { max_iter: usize },

    #[error("matrix exponential overflows ({squarings} squarings required)")]
    Overflow { squarings: u32 },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("too many singular grid points: {skipped} of {total} skipped")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("Yosida tail not settled: value {value:e}, spread {spread:e}")]
    TailNotSettled { value: f64, spread: f64 },

    #[error("(t, s) = ({t}, {s}) lies outside a <= s <= t <= b on [{a}, {b}]")]
    OutOfInterval { t: f64, s: f64, a: f64, b: f64 },

    #[error("tolerance not reached at level {level}: best successive difference {best_delta:e}")]
    ToleranceNotReached { level: u32, best_delta: f64 },

    #[error("operator is not invertible (condition estimate {cond:e})")]
    NotInvertible { cond: f64 },

    #[error("spectrum is numerically defective (eigenvector condition {cond:e})")]
    DefectiveSpectrum { cond: f64 },

    #[error("domain too small: need length >= {needed}, got {got}")]
    DomainTooSmall { needed: f64, got: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularResolvent { .. }
                | Error::EigenFailure { .. }
                | Error::Overflow { .. }
                | Error::TooManySkipped { .. }
                | Error::TailNotSettled { .. }
                | Error::ToleranceNotReached { .. }
                | Error::NotInvertible { .. }
                | Error::DefectiveSpectrum { .. }
        )
    }
}
