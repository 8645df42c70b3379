//! Full-class ranking evaluation: the true class is ranked against all C
//! classes, no negative sampling.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::metrics::{hr_at_k, ndcg_at_k, rank_of_positive};
use crate::eval::{DatasetFingerprint, EvalProtocol, EvalReport};
use crate::nn::rng::{stream, Stream};

use super::{ContractRecord, ContractSet};

/// Scores all C classes for one record; higher is better.
pub trait ClassScorer: Sync {
    fn name(&self) -> &str;
    fn class_scores(&self, set: &ContractSet, record: &ContractRecord, case_seed: u64) -> Result<Vec<f32>>;
}

/// Evaluate a class scorer over test records. The report reuses the shared
/// schema: `negatives` echoes `C - 1` (the full-ranking pool), `items` is the
/// class count.
pub fn evaluate_nbo(
    scorer: &dyn ClassScorer,
    set: &ContractSet,
    test_idx: &[usize],
    ks: &[usize],
    seed: u64,
) -> Result<EvalReport> {
    if test_idx.is_empty() {
        return Err(Error::Protocol("empty test split".into()));
    }
    if ks.is_empty() {
        return Err(Error::Protocol("at least one K value is required".into()));
    }
    let c = set.n_classes();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > c) {
        return Err(Error::Protocol(format!("k={k} outside [1, {c}]")));
    }
    let class_ids: Vec<u32> = (0..c as u32).collect();
    let ranks: Vec<usize> = test_idx
        .par_iter()
        .enumerate()
        .map(|(ci, &ri)| {
            let record = &set.records[ri];
            let mut case_rng = stream(seed, Stream::EvalCase, ci as u64);
            let case_seed: u64 = rand::Rng::random(&mut case_rng);
            let scores = scorer.class_scores(set, record, case_seed)?;
            if scores.len() != c {
                return Err(Error::Argument(format!(
                    "scorer {} returned {} scores for {c} classes",
                    scorer.name(),
                    scores.len()
                )));
            }
            rank_of_positive(&scores, record.target_class as usize, &class_ids)
        })
        .collect::<Result<Vec<usize>>>()?;

    let mut metrics = BTreeMap::new();
    for &k in ks {
        metrics.insert(format!("hr@{k}"), hr_at_k(&ranks, k)?);
        metrics.insert(format!("ndcg@{k}"), ndcg_at_k(&ranks, k)?);
    }
    Ok(EvalReport {
        model: scorer.name().to_string(),
        protocol: EvalProtocol { k: ks.to_vec(), negatives: c - 1, seed },
        metrics,
        dataset: DatasetFingerprint {
            users: set.len(),
            items: c,
            purchases: test_idx.len(),
            bids: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{ColumnDef, ColumnKind, ContractSchema};
    use super::*;

    fn toy_set(targets: &[u32], c: usize) -> ContractSet {
        let schema = ContractSchema {
            n_classes: c,
            columns: vec![
                ColumnDef { name: "occupation".into(), kind: ColumnKind::Categorical },
                ColumnDef { name: "credit".into(), kind: ColumnKind::Numerical },
                ColumnDef { name: "previous_class".into(), kind: ColumnKind::PreviousClass },
                ColumnDef { name: "target_class".into(), kind: ColumnKind::TargetClass },
            ],
        };
        let records = targets
            .iter()
            .map(|&t| ContractRecord {
                categoricals: vec!["a".into()],
                numericals: vec![0.5],
                previous_class: 0,
                target_class: t,
            })
            .collect();
        ContractSet::new(schema, records).unwrap()
    }

    struct PerfectScorer;
    impl ClassScorer for PerfectScorer {
        fn name(&self) -> &str {
            "perfect"
        }
        fn class_scores(&self, set: &ContractSet, record: &ContractRecord, _s: u64) -> Result<Vec<f32>> {
            let mut v = vec![0.0f32; set.n_classes()];
            v[record.target_class as usize] = 1.0;
            Ok(v)
        }
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let set = toy_set(&[3, 1, 4, 0], 5);
        let idx: Vec<usize> = (0..set.len()).collect();
        let report = evaluate_nbo(&PerfectScorer, &set, &idx, &[5], 1).unwrap();
        assert_eq!(report.metrics["hr@5"], 1.0);
        assert_eq!(report.metrics["ndcg@5"], 1.0);
    }

    #[test]
    fn random_scorer_sits_at_five_over_c() {
        let targets: Vec<u32> = (0..4000).map(|i| (i % 70) as u32).collect();
        let set = toy_set(&targets, 70);
        let idx: Vec<usize> = (0..set.len()).collect();
        let report =
            evaluate_nbo(&super::super::RandomClassScorer, &set, &idx, &[5], 9).unwrap();
        let hr = report.metrics["hr@5"];
        let expect = 5.0 / 70.0;
        let sigma = (expect * (1.0 - expect) / idx.len() as f64).sqrt();
        assert!((hr - expect).abs() <= 3.0 * sigma, "hr {hr} vs {expect} (sigma {sigma})");
    }

    #[test]
    fn empty_test_split_is_protocol_error() {
        let set = toy_set(&[1], 3);
        assert!(evaluate_nbo(&PerfectScorer, &set, &[], &[1], 0).is_err());
    }
}
