//! Dynamic multi-modal fusion: per-target selection and competence-weighted
//! voting over per-modality privacy classifiers.

pub mod base;
pub mod baselines;
pub mod competence;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod linear;
pub mod neighbors;
pub mod pipeline;
pub mod synth;
pub mod worked_example;

pub use error::{DmfpError, Result};
