use thiserror::Error;

/// Failure modes of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that do not compose.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A sparse kernel or index that violates its structural invariants.
    #[error("malformed structure: {0}")]
    Structural(String),
    /// An argument outside the domain of a function.
    #[error("out of domain: {0}")]
    Domain(String),
    /// The latency budget is below the latency of the fully pruned network.
    #[error(
        "infeasible latency budget {budget_ms} ms: the empty network already takes \
         tau + sum(t_1) = {floor_ms} ms"
    )]
    Infeasible { budget_ms: f64, floor_ms: f64 },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors raised while parsing one of the on-disk formats.
#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated payload: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
