use thiserror::Error;

/// Errors raised by the joint diagonalization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric: |a[{row},{col}] - a[{col},{row}]| = {diff:e}")]
    Asymmetric { row: usize, col: usize, diff: f64 },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("retraction step is degenerate (|v + p| = {norm:e})")]
    DegenerateStep { norm: f64 },

    #[error("search direction is not a descent direction (<grad, s> = {slope:e})")]
    NotDescent { slope: f64 },

    #[error("backtracking line search exhausted after {tries} trials")]
    BacktrackExhausted { tries: usize },

    #[error("feasible set is empty: {constraints} constraints in dimension {n}")]
    Infeasible { constraints: usize, n: usize },

    #[error("column {column} lies in the span of previous columns (residual {residual:e})")]
    DegenerateColumn { column: usize, residual: f64 },

    #[error("matrix is rank deficient: numerical rank {rank} < {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("not enough iterations for a rate estimate: have {have}, need {need}")]
    InsufficientIterations { have: usize, need: usize },

    #[error("input matrices commute exactly")]
    ExactlyCommuting,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
