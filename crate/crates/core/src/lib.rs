//! Recommender toolkit for the used-vehicle auction and contract-renewal
//! domain: a deterministic tensor kernel with reverse-mode differentiation, a
//! causal self-attention sequential recommender over item attributes, simple
//! reference rankers, a top-K ranking evaluation harness, a deep embedding
//! classifier for next-offer prediction, and synthetic data generators that
//! stand in for proprietary production datasets.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod nbo;
pub mod baselines;
pub mod sasrec;
pub mod error;
pub mod gradcheck_suite;
pub mod nn;

pub use error::{Error, Result};
