//! Ranking metrics and the sampled-candidate evaluation protocol.

pub mod metrics;
mod protocol;

pub use metrics::{hr_at_k, ndcg_at_k, rank_of_positive};
pub use protocol::{
    evaluate, AuctionScorer, DatasetFingerprint, EvalCase, EvalProtocol, EvalReport,
};
