//! Top-K ranking metrics for single-positive evaluation cases.

use crate::error::{Error, Result};

/// 1-based rank of the positive after sorting by descending score, ties
/// broken by ascending id.
pub fn rank_of_positive(scores: &[f32], positive: usize, ids: &[u32]) -> Result<usize> {
    if scores.len() != ids.len() {
        return Err(Error::Argument(format!(
            "{} scores vs {} ids",
            scores.len(),
            ids.len()
        )));
    }
    if positive >= scores.len() {
        return Err(Error::Argument(format!(
            "positive index {positive} out of range for {} candidates",
            scores.len()
        )));
    }
    let ps = scores[positive];
    let pid = ids[positive];
    let ahead = scores
        .iter()
        .zip(ids)
        .filter(|&(&s, &id)| s > ps || (s == ps && id < pid))
        .count();
    Ok(ahead + 1)
}

/// Fraction of cases whose positive ranked within the top K.
pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Protocol("hr@k over zero evaluation cases".into()));
    }
    let hits = ranks.iter().filter(|&&r| r <= k).count();
    Ok(hits as f64 / ranks.len() as f64)
}

/// Mean positional discount `1/log2(rank+1)` for ranks within K, zero
/// otherwise. With a single positive the ideal DCG is 1, so this is already
/// normalized.
pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Protocol("ndcg@k over zero evaluation cases".into()));
    }
    let total: f64 = ranks
        .iter()
        .map(|&r| if r <= k { 1.0 / ((r as f64) + 1.0).log2() } else { 0.0 })
        .sum();
    Ok(total / ranks.len() as f64)
}
