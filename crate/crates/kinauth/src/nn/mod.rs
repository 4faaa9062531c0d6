//! Minimal deterministic neural-network core.
//!
//! Just enough machinery to express the two fixed architectures this crate
//! trains: flat row-major tensors, a small set of layers (1-D convolution,
//! batch normalization, ReLU, max pooling, dense, dropout, L2 normalization)
//! with hand-derived backward passes, and Adam/SGD optimizers. There is no
//! general autodiff: each layer caches exactly what its backward pass needs,
//! and [`net`] composes them in sequence.
//!
//! Training runs in `f32`; every kernel is generic over [`Scalar`] so the
//! gradient-check tests can run the identical code in `f64`, where central
//! finite differences are tight enough to catch sign and indexing mistakes.

mod layers;
mod net;
mod optim;
mod params;
mod tensor;

pub use layers::*;
pub use net::*;
pub use optim::*;
pub use params::*;
pub use tensor::*;

use thiserror::Error;

/// Errors from tensor ops, layers, and optimizers.
#[derive(Debug, Error)]
pub enum NnError {
    /// Operand shapes are inconsistent with the operation's contract.
    #[error("shape error: {0}")]
    ShapeError(String),
    /// Batch normalization was asked to train on a batch of fewer than 2 rows.
    #[error("degenerate batch: batch size {0} < 2 in train mode")]
    DegenerateBatch(usize),
    /// Gradient map does not line up with the parameter set.
    #[error("misaligned grads: {0}")]
    MisalignedGrads(String),
    /// Parameter file could not be read or written.
    #[error("parameter file i/o: {0}")]
    Io(#[from] std::io::Error),
    /// Parameter file is structurally valid but from an unsupported version
    /// or dtype.
    #[error("incompatible parameter file: {0}")]
    Incompatible(String),
    /// Parameter file is malformed (bad header, wrong payload length, …).
    #[error("corrupt parameter file: {0}")]
    Corrupt(String),
}
