//! Desk-scale laboratory for fine-tuning a sequence-to-sequence transcriber
//! on air traffic control phraseology with low-rank adapters.
//!
//! The pipeline: curate transcripts and audio ([`corpus`], [`textnorm`]),
//! score transcriptions ([`wer`]), adapt a small encoder-decoder
//! ([`model`], [`training`]) and run cross-validated grid searches
//! ([`experiment`]).

pub mod corpus;
pub mod experiment;
pub mod model;
pub mod textnorm;
pub mod training;
pub mod wer;
