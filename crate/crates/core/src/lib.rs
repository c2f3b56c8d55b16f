//! Self-supervised Transformer for sparse, irregularly sampled multivariate
//! time series.
//!
//! Each stay is a set of `(time, variable, value)` triplets. Triplets are
//! embedded with continuous value embeddings, contextualized by a
//! Transformer encoder without positional encodings, and pooled by a fusion
//! self-attention layer. The trunk can be pretrained on a masked forecasting
//! task before fine-tuning on a binary target. An interpretable variant
//! decomposes its logit into exact per-observation contributions.

pub mod cli;
pub mod data;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod training;

mod error;

pub use error::{Error, Result};
