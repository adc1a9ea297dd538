use std::path::PathBuf;

/// Errors raised by the solvers and their kernels.
#[derive(Debug, thiserror::Error)]
pub enum LyapError {
    #[error("singular matrix: no acceptable pivot at row {row}")]
    SingularMatrix { row: usize },

    #[error("singular projected system: -p coincides with a Ritz value")]
    SingularProjectedSystem,

    #[error("rank-deficient least-squares matrix")]
    RankDeficientLS,

    #[error("dense eigensolver failed to converge")]
    EigFailure,

    #[error("extended Krylov breakdown at step {step}: rank-deficient block")]
    Breakdown { step: usize },

    #[error("no stable shift available")]
    NoStableShift,

    #[error("shift {re}{im:+}i is not in the open left half plane")]
    UnstableShift { re: f64, im: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid sparse matrix: {0}")]
    InvalidSparse(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Matrix Market parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LyapError {
    /// Short diagnostic name, stable across releases.
    pub fn diagnostic(&self) -> &'static str {
        match self {
            LyapError::SingularMatrix { .. } => "SingularMatrix",
            LyapError::SingularProjectedSystem => "SingularProjectedSystem",
            LyapError::RankDeficientLS => "RankDeficientLS",
            LyapError::EigFailure => "EigFailure",
            LyapError::Breakdown { .. } => "BreakdownError",
            LyapError::NoStableShift => "NoStableShift",
            LyapError::UnstableShift { .. } => "UnstableShift",
            LyapError::NotSpd => "NotSPD",
            LyapError::DimensionMismatch(_) => "DimensionMismatch",
            LyapError::InvalidSparse(_) => "InvalidSparse",
            LyapError::InvalidArgument(_) => "InvalidArgument",
            LyapError::Parse { .. } => "ParseError",
            LyapError::Io { .. } => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, LyapError>;
