//! Sampled-candidate evaluation: each held-out purchase is ranked against N
//! uniformly sampled vehicles the dealer never interacted with.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DealerRecord, EvalCaseRef, Interaction};
use crate::error::{Error, Result};
use crate::nn::rng::{stream, Stream};

use super::metrics::{hr_at_k, ndcg_at_k, rank_of_positive};

/// Pool construction parameters. The default pool of 1 positive + 103
/// sampled negatives matches the page size used to display recommendations
/// at one auction.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub k: Vec<usize>,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self { k: vec![20], negatives: 103, seed: 42 }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() {
            return Err(Error::Protocol("at least one K value is required".into()));
        }
        if self.negatives < 1 {
            return Err(Error::Protocol("negatives must be >= 1".into()));
        }
        if let Some(&k) = self.k.iter().find(|&&k| k == 0 || k > self.negatives + 1) {
            return Err(Error::Protocol(format!(
                "k={k} outside [1, pool size {}]",
                self.negatives + 1
            )));
        }
        Ok(())
    }
}

/// One evaluation case handed to a scorer. `candidates[0]` is the positive.
pub struct EvalCase<'a> {
    pub dealer: &'a DealerRecord,
    pub dealer_pos: usize,
    /// Dealer interactions strictly before the held-out purchase,
    /// chronological.
    pub history: Vec<&'a Interaction>,
    /// Vehicle positions in the dataset.
    pub candidates: Vec<usize>,
    pub candidate_ids: Vec<u32>,
    /// Index of the positive inside `candidates`.
    pub positive: usize,
    pub case_index: usize,
    pub protocol_seed: u64,
}

impl EvalCase<'_> {
    /// Seeded generator private to this case; independent of evaluation
    /// order.
    pub fn scorer_rng(&self) -> rand_chacha::ChaCha8Rng {
        stream(self.protocol_seed, Stream::Scorer, self.case_index as u64)
    }
}

/// Scores one candidate pool; higher is better, ties resolved by ascending
/// vehicle id in the metric layer.
pub trait AuctionScorer: Sync {
    fn name(&self) -> &str;
    fn score_case(&self, ds: &Dataset, case: &EvalCase<'_>) -> Result<Vec<f32>>;
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub users: usize,
    pub items: usize,
    pub purchases: usize,
    pub bids: usize,
}

/// Metric report; serialized as pretty JSON with fixed field names.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub protocol: EvalProtocol,
    pub metrics: BTreeMap<String, f64>,
    pub dataset: DatasetFingerprint,
}

impl EvalReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Build the candidate pool and history for one held-out purchase.
fn build_case<'a>(
    ds: &'a Dataset,
    case_ref: &EvalCaseRef,
    case_index: usize,
    protocol: &EvalProtocol,
) -> Result<EvalCase<'a>> {
    let positive_it = &ds.interactions[case_ref.interaction];
    let dealer_pos = case_ref.dealer_pos;
    let dealer = &ds.dealers[dealer_pos];

    let interacted: HashSet<usize> = ds
        .dealer_history(dealer_pos)
        .iter()
        .map(|&i| ds.vehicle_pos(ds.interactions[i].vehicle_id).expect("validated"))
        .collect();
    let mut eligible: Vec<usize> =
        (0..ds.n_vehicles()).filter(|v| !interacted.contains(v)).collect();
    if eligible.len() < protocol.negatives {
        return Err(Error::Protocol(format!(
            "dealer {} has only {} eligible negatives, protocol needs {}",
            dealer.dealer_id,
            eligible.len(),
            protocol.negatives
        )));
    }

    // Partial Fisher-Yates for N without replacement.
    let mut rng = stream(protocol.seed, Stream::EvalCase, case_index as u64);
    let n = protocol.negatives;
    for i in 0..n {
        let j = rng.random_range(i..eligible.len());
        eligible.swap(i, j);
    }
    let mut candidates = Vec::with_capacity(n + 1);
    candidates.push(ds.vehicle_pos(positive_it.vehicle_id).expect("validated"));
    candidates.extend_from_slice(&eligible[..n]);
    let candidate_ids: Vec<u32> =
        candidates.iter().map(|&v| ds.vehicles[v].vehicle_id).collect();

    let history: Vec<&Interaction> = ds
        .dealer_history(dealer_pos)
        .iter()
        .map(|&i| &ds.interactions[i])
        .filter(|it| it.timestamp < positive_it.timestamp)
        .collect();

    Ok(EvalCase {
        dealer,
        dealer_pos,
        history,
        candidates,
        candidate_ids,
        positive: 0,
        case_index,
        protocol_seed: protocol.seed,
    })
}

/// Evaluate a scorer over held-out cases. Cases are independent and scored
/// in parallel; per-case RNG streams keyed by `(seed, case index)` keep the
/// result order-independent and reproducible.
pub fn evaluate(
    scorer: &dyn AuctionScorer,
    ds: &Dataset,
    cases: &[EvalCaseRef],
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    protocol.validate()?;
    if cases.is_empty() {
        return Err(Error::Protocol("no evaluation cases in this split".into()));
    }
    let ranks: Vec<usize> = cases
        .par_iter()
        .enumerate()
        .map(|(ci, case_ref)| {
            let case = build_case(ds, case_ref, ci, protocol)?;
            let scores = scorer.score_case(ds, &case)?;
            if scores.len() != case.candidates.len() {
                return Err(Error::Argument(format!(
                    "scorer {} returned {} scores for {} candidates",
                    scorer.name(),
                    scores.len(),
                    case.candidates.len()
                )));
            }
            rank_of_positive(&scores, case.positive, &case.candidate_ids)
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut metrics = BTreeMap::new();
    for &k in &protocol.k {
        metrics.insert(format!("hr@{k}"), hr_at_k(&ranks, k)?);
        metrics.insert(format!("ndcg@{k}"), ndcg_at_k(&ranks, k)?);
    }
    Ok(EvalReport {
        model: scorer.name().to_string(),
        protocol: protocol.clone(),
        metrics,
        dataset: DatasetFingerprint {
            users: ds.n_dealers(),
            items: ds.n_vehicles(),
            purchases: ds.count(crate::data::Relation::Purchase),
            bids: ds.count(crate::data::Relation::Bid),
        },
    })
}
