//! Coil inductance and quality-factor identification from a photo of the
//! coil plus its operating frequency.
//!
//! The crate contains everything needed end to end: a small dense-tensor
//! engine with hand-derived backward passes ([`ops`]), the fused
//! image/frequency network ([`model`]), plain gradient-descent training
//! ([`train`]), a synthetic coil generator with a closed-form physics oracle
//! and PGM ingestion ([`dataset`]), and evaluation metrics ([`metrics`]).

pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
