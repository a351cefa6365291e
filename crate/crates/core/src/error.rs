use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mode index {index} (have {len})")]
    InvalidMode { index: usize, len: usize },

    #[error("unknown mode label `{0}`")]
    UnknownLabel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("wrong protocol stage: expected {expected}, got {got}")]
    Stage {
        expected: &'static str,
        got: &'static str,
    },

    #[error("phase correction requested on a failed parity-check outcome")]
    FailedOutcome,

    #[error("truncation leakage {leakage:e} exceeds tolerance {tol:e}")]
    Truncation { leakage: f64, tol: f64 },

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("not a valid density matrix: {0}")]
    InvalidState(String),

    #[error("measurement set is not informationally complete (operator rank {0}, need 16)")]
    Incomplete(usize),

    #[error("zero model probability for a setting with observed counts")]
    ZeroProbability,

    #[error("time-tag stream is not sorted: {0}")]
    Unsorted(String),

    #[error("no peak above the noise floor in {what} (snr {snr:.2})")]
    NoPeak { what: String, snr: f64 },

    #[error("coincidence window of {width} ps would overlap the adjacent period of {period} ps")]
    WindowOverlap { width: u64, period: u64 },

    #[error("picosecond range overflow: {0}")]
    Overflow(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
