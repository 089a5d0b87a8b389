//! Learned test-time augmentation ensembles for content-based image retrieval.
//!
//! The crate covers the whole search loop: image transforms, a small built-in
//! feature extractor, descriptor aggregation and whitening, an offline feature
//! cache, the policy model, an LSTM controller trained with PPO, the
//! triplet-loss reward and MAP@K evaluation.

pub mod aggregate;
pub mod controller;
pub mod error;
pub mod extractor;
pub mod featcache;
pub mod imagexform;
pub mod occurrence;
pub mod policy;
pub mod retrieval;
pub mod reward;
pub mod search;
pub mod source;
pub mod synthetic;
mod util;

pub use error::{Error, Result};
