//! Hierarchical matrix factorization for interpretable collaborative filtering.
//!
//! User and item embeddings are composed from chains of row-stochastic
//! connection matrices ending in a small set of root cluster embeddings, and
//! trained end to end with AdamW on a squared-error or BPR objective.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod interpret;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod training;

pub use error::{Error, Result};
