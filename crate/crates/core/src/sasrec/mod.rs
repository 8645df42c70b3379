//! Attribute-aware multi-relational sequential recommender.
//!
//! A causal self-attention encoder over a dealer's interaction history.
//! Items enter as projected feature vectors rather than id embeddings
//! (auction items are unique, so id embeddings would never repeat), with
//! learned positional and relation embeddings added on top. Training jointly
//! predicts next purchases and, weighted by `bid_loss_weight`, next bids.

mod model;
mod train;

pub use model::{
    HistEntry, SasrecModel, SasrecScorer, SeqBatch, TrainBatch, MODEL_KIND,
};
pub use train::{train, EpochLog, TrainOutcome, PATIENCE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SasrecConfig {
    pub embed_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    /// Weight of the auxiliary next-bid loss term.
    pub bid_loss_weight: f64,
    pub negatives_per_position: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// When false, bid interactions are excluded from input sequences and
    /// targets entirely (the purchase-only model variant).
    pub include_bids: bool,
}

impl Default for SasrecConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            blocks: 2,
            heads: 2,
            max_seq_len: 50,
            dropout: 0.2,
            bid_loss_weight: 0.5,
            negatives_per_position: 1,
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 128,
            seed: 42,
            include_bids: true,
        }
    }
}

#[cfg(test)]
mod tests;

impl SasrecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.max_seq_len < 1 {
            return Err(Error::Config("max_seq_len must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.bid_loss_weight < 0.0 {
            return Err(Error::Config("bid_loss_weight must be >= 0".into()));
        }
        if self.blocks == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("blocks, epochs and batch_size must be positive".into()));
        }
        if self.negatives_per_position == 0 {
            return Err(Error::Config("negatives_per_position must be >= 1".into()));
        }
        Ok(())
    }
}
