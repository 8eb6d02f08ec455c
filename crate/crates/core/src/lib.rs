//! Decoupled dynamic scene-graph generation: a dual-branch transformer that
//! detects ⟨subject, object, relation⟩ triplets in video frames, together
//! with matching, losses, a synthetic compositional corpus and metrics.

pub mod autograd;
pub mod cli;
pub mod criterion;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod image;
pub mod inference;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prediction;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
