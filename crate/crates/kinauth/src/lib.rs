//! Few-shot behavioral-biometric authentication from motion sensors.
//!
//! `kinauth` turns raw accelerometer / gyroscope / magnetometer recordings into
//! compact behavior embeddings and verifies users against a handful of enrolled
//! samples — no per-user retraining. The pieces, in pipeline order:
//!
//! - [`data`]: CSV ingest, resampling onto a uniform grid, sliding windows,
//!   user splits, pair sampling, and a synthetic-data generator for tests.
//! - [`nn`]: a small deterministic neural-network core (1-D convolutions,
//!   batch norm, dense layers, Adam/SGD) with hand-derived backward passes.
//! - [`metric`]: triplet/contrastive losses and online semi-hard triplet
//!   mining over within-batch embeddings.
//! - [`model`]: the embedding network + decision network bundle, n-shot
//!   verification, and the model file format.
//! - [`train`]: the two-stage training loop (metric learning, then a frozen-
//!   backbone decision head), threshold calibration, and grid search.
//! - [`eval`]: FAR/FRR/F1, ROC/AUC, EER, and the n-shot × window-length
//!   evaluation grid.
//! - [`fusion`]: score normalization and multi-matcher score-level fusion.
//! - [`service`]: a TCP enrollment/verification service with a persistent
//!   journal store and a consecutive-failure fallback state machine.
//!
//! Everything is seeded: given the same inputs, seeds, and configuration, every
//! artifact this crate writes (models, score files, reports) is byte-identical
//! across runs.

pub mod data;
pub mod eval;
pub mod fusion;
pub mod metric;
pub mod model;
pub mod nn;
pub mod rng;
pub mod service;
pub mod train;

pub use model::{AuthModel, ChannelSubset, EMBED_DIM};

/// Crate version, embedded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
