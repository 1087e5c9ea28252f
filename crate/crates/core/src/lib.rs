//! Detector of synthetic tabular rows that works across tables with
//! unseen schemas.
//!
//! Rows are rendered as `<column>:<value>` datums, encoded character by
//! character, and read by a two-level transformer: a datum transformer with
//! positional encoding local to each datum, then a row transformer without
//! positional encoding over the pooled datum tokens. The result is invariant
//! to column order. An optional adversarial table-classification head
//! (through gradient reversal) discourages table-specific embeddings.
//!
//! The math core is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below fix the common choices.

pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod perturbation;
pub mod scalar;
pub mod textualizer;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision detector used for training and inference.
pub type Detector = model::Detector<f32>;
/// Double-precision replay of a detector, for gradient checking.
pub type Detector64 = model::Detector<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type ParamStore32 = numerics::ParamStore<f32>;
