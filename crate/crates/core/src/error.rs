use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the in-memory core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("value out of range for {what}: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("record `{0}` is excluded but has no exclusion reason")]
    MissingExclusionReason(String),
    #[error("no mask supplied for sample `{0}`")]
    MissingMask(String),
    #[error("no reference mask for sample `{0}`")]
    MissingReference(String),
    #[error("expected {expected} member masks, got {found}")]
    MemberCountMismatch { expected: usize, found: usize },
    #[error("member {index} mask is {found:?}, expected {expected:?}")]
    MemberShapeMismatch {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown architecture `{requested}` (registered: {})", registered.join(", "))]
    UnknownArchitecture {
        requested: String,
        registered: Vec<String>,
    },
    #[error("architecture mismatch: checkpoint is `{found}`, requested `{expected}`")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("parameter layout mismatch: {0}")]
    ParameterMismatch(String),
    #[error("teacher dice must be positive, got {0}")]
    NonPositiveTeacher(f64),
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
