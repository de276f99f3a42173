//! Crate-wide error type.
//!
//! Variants are grouped by what went wrong rather than where: data problems
//! (malformed corpora, vocabularies, checkpoints) versus numeric/training
//! problems (shape mismatches, non-finite values). The CLI maps the former to
//! exit code 2 and the latter to exit code 3.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- data-shaped problems (CLI exit code 2) ---
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("corpus schema violation at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("unknown emotion label {label:?} at {location}")]
    Label { label: String, location: String },

    #[error("vocabulary error in {path}: {message}")]
    Vocab { path: String, message: String },

    #[error("cannot compute statistics: {reason}")]
    Stats { reason: String },

    #[error("cannot split {n_dialogues} dialogues into {k} folds: {reason}")]
    Split {
        k: usize,
        n_dialogues: usize,
        reason: String,
    },

    #[error("evaluation input mismatch: {message}")]
    Evaluation { message: String },

    #[error("bad checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },

    #[error("configuration error: {message}")]
    Config { message: String },

    // --- numeric / training problems (CLI exit code 3) ---
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenIdOutOfRange { id: u32, vocab_size: usize },

    #[error("sequence length {len} exceeds the {max} learned positions")]
    PositionOutOfRange { len: usize, max: usize },

    #[error("shape mismatch in {operation}: expected {expected}, got {actual}")]
    Shape {
        operation: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value produced by {site}")]
    Numeric { site: String },

    #[error("invalid pooling span [{start}, {end}) for sequence of length {len}")]
    PoolingSpan {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("no class weight for {class}: class had zero training count")]
    MissingClassWeight { class: &'static str },

    #[error("training error: {message}")]
    Training { message: String },
}

impl Error {
    /// Process exit code the CLI should use for this error: 2 for data
    /// problems, 3 for numeric/training problems. (1 is reserved for usage
    /// errors, which never reach the library.)
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Label { .. }
            | Error::Vocab { .. }
            | Error::Stats { .. }
            | Error::Split { .. }
            | Error::Evaluation { .. }
            | Error::Checkpoint { .. }
            | Error::Config { .. } => 2,
            Error::TokenIdOutOfRange { .. }
            | Error::PositionOutOfRange { .. }
            | Error::Shape { .. }
            | Error::Numeric { .. }
            | Error::PoolingSpan { .. }
            | Error::MissingClassWeight { .. }
            | Error::Training { .. } => 3,
        }
    }
}
