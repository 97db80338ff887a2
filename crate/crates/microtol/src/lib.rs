//! Micro tree-of-life: a desk-scale bench for hierarchy-aware contrastive
//! training.
//!
//! The crate covers the full pipeline:
//!
//! - [`taxonomy`]: multi-source taxon ingestion, priority merge, homonym
//!   detection, and the canonical seven-rank store.
//! - [`texttypes`]: the five label text formats, the prompt template, and the
//!   mixed-type sampler used during training.
//! - [`synth`]: procedural generation of a hierarchical feature-vector
//!   dataset, manifests, and the rare-species holdout split.
//! - [`tensor`]: a minimal reverse-mode autodiff engine, AdamW, the warmup +
//!   cosine schedule, and the checkpoint container.
//! - [`models`]: tiny image/text encoders, the contrastive and
//!   cross-entropy objectives, and the training loop.
//! - [`eval`]: zero-shot, SimpleShot few-shot, generalized zero-shot, the
//!   text-type cross matrix, and intrinsic separability scores.
//! - [`config`]: the line-based run configuration grammar shared by all CLI
//!   subcommands.
//! - [`report`]: the key-value report grammar and tab-separated tables.
//! - [`plot`]: SVG scatter plots for 2-D projections.

pub mod config;
pub mod eval;
pub mod models;
pub mod plot;
pub mod report;
pub mod synth;
pub mod taxonomy;
pub mod tensor;
pub mod texttypes;

/// Tool version embedded into every emitted artifact.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
