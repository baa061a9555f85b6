//! Multimodal MCI detection from picture descriptions on precomputed
//! embeddings.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
