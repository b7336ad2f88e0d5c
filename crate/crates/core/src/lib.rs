//! Alignment of frozen spectrum and molecule embeddings in a shared space.
//!
//! This crate is `no_std` (with `alloc`) and carries every numerical piece:
//! projection heads with exact backpropagation, the regression / in-batch /
//! candidate contrastive objectives, AdamW with a warmup-cosine schedule,
//! candidate-set retrieval with Recall@k, the normalized sliced-Wasserstein
//! shift metric, group-key splits, and a synthetic paired-data generator.
//!
//! File formats, configuration and the command line live in the companion
//! `specalign` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod error;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod retrieval;
pub mod rng;
pub mod shift;
pub mod splits;
pub mod synthetic;
pub mod train;

pub use model::{AlignmentModel, GradientSet, Mode, ModelConfig, ScoringMode};
pub use rng::RngState;
pub use dataset::{
    validate_dataset, CandidateEntry, CandidateTable, EmbeddingMatrix, PairedDataset, RecordMeta,
    RoleTag, Rule, Violation,
};
pub use error::{Error, Result};
pub use matrix::Matrix;


