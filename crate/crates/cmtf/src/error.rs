use thiserror::Error;

/// Errors produced by construction, kernels, solvers, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid mode {0} (modes are 1, 2, 3)")]
    InvalidMode(usize),

    #[error("non-finite value rejected at construction: {0}")]
    NonFinite(String),

    #[error("index out of bounds: {0}")]
    OutOfBounds(String),

    #[error("duplicate coordinate: {0}")]
    DuplicateCoordinate(String),

    #[error("missing factor matrix {0}")]
    MissingFactor(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    SvdNonConvergence { rows: usize, cols: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("repetition {rep} failed: {source}")]
    RepetitionFailed {
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of numerical routines (as opposed to bad input data).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SvdNonConvergence { .. } | Error::Numeric(_) | Error::RepetitionFailed { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
