//! Contrastive parameter ensembling for a synthetic summarization task.
//!
//! A base summarizer is fine-tuned separately on clean and noisy subsets of
//! its training data, and the two resulting models are combined in weight
//! space as `base + alpha * (expert - anti_expert)`.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod selection;

pub use error::{Error, Result};
