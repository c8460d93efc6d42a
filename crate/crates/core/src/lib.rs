//! Numerics for learning embeddings in an angular space.
//!
//! The crate provides pair-based angular losses and cosine-softmax losses
//! with analytic gradients, norm regularizers (spherical embedding
//! constraint and l2 penalty), from-scratch optimizers with a
//! direction-update analyzer, and a deterministic synthetic training
//! harness with retrieval metrics.
//!
//! All numeric kernels are generic over [`Real`] (`f32`/`f64`); the harness
//! and the verification suites run in `f64`, which the tolerances quoted in
//! the test suites assume.

pub mod batch;
pub mod error;
pub mod harness;
pub mod losses;
pub mod optimizers;
pub mod regularizers;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision specializations used by the harness and the CLI.
pub type EmbeddingBatchF64 = batch::EmbeddingBatch<f64>;
pub type UnitEmbeddingF64 = batch::UnitEmbedding<f64>;
pub type NormStatsF64 = batch::NormStats<f64>;
pub type LossConfigF64 = losses::LossConfig<f64>;
pub type LossOutputF64 = losses::LossOutput<f64>;
pub type PairGradientF64 = losses::PairGradient<f64>;
pub type ClassTemplatesF64 = losses::ClassTemplates<f64>;
pub type RegularizerConfigF64 = regularizers::RegularizerConfig<f64>;
pub type RegularizerStateF64 = regularizers::RegularizerState<f64>;
pub type OptimizerConfigF64 = optimizers::OptimizerConfig<f64>;
pub type OptimizerStateF64 = optimizers::OptimizerState<f64>;
