use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quality score {0} is outside [0, 1]")]
    QualityOutOfRange(f64),

    #[error("token {token} is outside a vocabulary of size {size}")]
    TokenOutOfRange { token: u32, size: usize },

    #[error("malformed model: no transition row for context {0:?}")]
    MissingRow(Vec<u32>),

    #[error("malformed model: {0}")]
    MalformedModel(String),

    #[error("state space of {states} outputs exceeds the enumeration cap of {cap}")]
    EnumerationCap { states: u128, cap: usize },

    #[error("matrix of order {n} exceeds the eigen cap of {cap}")]
    EigenCap { n: usize, cap: usize },

    #[error("no outputs at quality {0}")]
    EmptyQualitySet(f64),

    #[error("graph is reducible; check is_irreducible before asking for the period")]
    Reducible,

    #[error("row {0} has zero out-weight")]
    ZeroRow(usize),

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("rejection sampling exhausted its cap of {0} draws")]
    RejectionCapExhausted(usize),

    #[error("generation length {length} exceeds key sequence length {n}")]
    KeySequenceTooShort { length: usize, n: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("oracle failure at step {step}: {source}")]
    Oracle { step: usize, source: Box<Error> },

    #[error("configuration: {0}")]
    Config(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
