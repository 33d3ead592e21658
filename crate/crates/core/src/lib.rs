//! Segmentation-derived visual question answering for multiparametric brain
//! MRI: volume I/O, lesion geometry, templated question generation, a
//! prompt-conditioned hierarchical mixture-of-experts fusion block and the
//! metrics used to score it.

pub mod error;
pub mod eval;
pub mod fixtures;
pub mod moe;
pub mod morphology;
pub mod qagen;
pub(crate) mod na;
pub mod regions;
pub mod rng;
pub mod shape;
pub mod volume;

pub use error::{Error, Result};
