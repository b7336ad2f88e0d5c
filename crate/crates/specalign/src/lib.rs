//! File formats, run configuration and command implementations for
//! [`specalign_core`].
//!
//! Embeddings are stored as EMB1 binaries, per-record metadata, candidate
//! lists, split assignments and metrics as JSON lines, and trained models
//! as MSA1 checkpoints.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod emb;
pub mod error;
pub mod jsonl;

pub use commands::{run, Command, Outcome, Overrides};
pub use config::RunConfig;
pub use dataset::{load_dataset, save_dataset, DatasetPaths};
pub use emb::{read_embedding_file, write_embedding_file};
pub use error::{Error, Result};
