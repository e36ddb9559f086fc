//! Miniature encoder-decoder transformer with injectable low-rank adapters
//! and hand-written reverse-mode gradients.

pub mod checkpoint;
pub mod layers;
pub mod linear;
pub mod matrix;
pub mod param;
pub mod transformer;
pub mod vocab;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointKind};
pub use linear::{lora_forward, AdaptedLinear, LoraAdapter, LoraConfig, Role};
pub use matrix::Matrix;
pub use param::{Grads, Param};
pub use transformer::{Encoded, IncrementalDecoder, Model, ModelConfig, Tape};
pub use vocab::Vocab;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("non-finite value")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("rank {rank} exceeds {limit} for a {role} matrix")]
    RankTooLarge { rank: usize, limit: usize, role: Role },
    #[error("token {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty decoder prefix")]
    EmptySequence,
    #[error("no unmerged adapters to merge")]
    NothingToMerge,
    #[error("no merged adapters to unmerge")]
    NothingToUnmerge,
}
