use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PegError {
    #[error("probability vector needs at least 2 entries, got {len}")]
    TooShort { len: usize },
    #[error("probability vector sums to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("entry {index} is negative or not finite: {value}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("support violation at index {index}: p > 0 where q = 0")]
    SupportViolation { index: usize },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(u8),
    #[error("co-report counts sum to {sum}, subset has {expected} tasks")]
    CountMismatch { sum: u64, expected: usize },
    #[error("batch of {k} tasks is too small, need at least 4")]
    BatchTooSmall { k: usize },
    #[error("task index {index} out of range for {len} tasks")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("need at least 2 agents, got {n}")]
    TooFewAgents { n: usize },
    #[error("task subset of size {size} is too small, need at least 2")]
    SubsetTooSmall { size: usize },
    #[error("task subset of size {size} exceeds the enumeration limit of {max}")]
    SubsetTooLarge { size: usize, max: usize },
    #[error("invalid task split: {0}")]
    InvalidSplit(String),
    #[error("agent {agent} cannot be paired with itself")]
    SameAgent { agent: usize },
    #[error("expected {expected} strategies, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("coordinate {index} has zero mass; multiplicative update cannot revive it")]
    ZeroSupport { index: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid trust region: {0}")]
    InvalidTrustRegion(String),
    #[error("batch is empty or has no reports")]
    EmptyBatch,
    #[error("sequence is empty")]
    EmptySequence,
    #[error("peer {peer} is uninformative (|det| = {det})")]
    UninformativePeer { peer: usize, det: f64 },
    #[error("invalid world model: {0}")]
    InvalidWorld(String),
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
}

pub type Result<T, E = PegError> = std::result::Result<T, E>;
