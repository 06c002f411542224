//! Streaming inverse text normalization toolkit.
//!
//! A small transformer encoder tags spoken-form word streams with number-case
//! and punctuation labels under context-aware attention masks; tagged spans
//! are converted to written form with weighted finite-state transducers; an
//! incremental session engine handles chunked input with an incomplete-word
//! revision buffer.
//!
//! The numeric core is generic over the scalar type ([`Scalar`]): use `f64`
//! for numerical verification and `f32` for training and serving. Concrete
//! aliases for the common instantiations live at the crate root.

pub mod bench;
pub mod checkpoint;
pub mod datagen;
pub mod encoder;
pub mod verbal;
pub mod wfst;
pub mod masking;
pub mod metrics;
pub mod scalar;
pub mod streaming;
pub mod trainer;
pub mod tags;
pub mod tensor;
pub mod tokenizer;

pub use scalar::Scalar;

/// f32 model parameters (training/serving precision).
pub type ModelParams32 = encoder::ModelParams<f32>;
/// f64 model parameters (verification precision).
pub type ModelParams64 = encoder::ModelParams<f64>;
