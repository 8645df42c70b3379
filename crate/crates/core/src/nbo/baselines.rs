//! Heuristic class rankers: repeat + top-popular, nearest neighbours, and a
//! random scorer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::rng::{stream, Stream};

use super::eval::ClassScorer;
use super::{ContractRecord, ContractSet, Encoders};

/// Train-split target-class counts.
pub struct ClassPopularity {
    counts: Vec<u32>,
}

impl ClassPopularity {
    /// Build from explicit training rows; never sees other records.
    pub fn build(n_classes: usize, targets: impl IntoIterator<Item = u32>) -> Self {
        let mut counts = vec![0u32; n_classes];
        for t in targets {
            counts[t as usize] += 1;
        }
        Self { counts }
    }

    pub fn count(&self, class: u32) -> u32 {
        self.counts[class as usize]
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }
}

/// Position 1 is the previous vehicle class; the rest are the most popular
/// classes excluding that repeat, ties by ascending class id.
pub fn repeat_top_pop_ranking(previous_class: u32, pop: &ClassPopularity, top: usize) -> Vec<u32> {
    let mut rest: Vec<u32> = (0..pop.n_classes() as u32).filter(|&c| c != previous_class).collect();
    rest.sort_by(|&a, &b| pop.count(b).cmp(&pop.count(a)).then_with(|| a.cmp(&b)));
    let mut out = Vec::with_capacity(top);
    out.push(previous_class);
    out.extend(rest.into_iter().take(top.saturating_sub(1)));
    out
}

pub struct RepeatTopPopScorer<'a> {
    pub popularity: &'a ClassPopularity,
}

impl ClassScorer for RepeatTopPopScorer<'_> {
    fn name(&self) -> &str {
        "repeat-top-pop"
    }

    fn class_scores(&self, set: &ContractSet, record: &ContractRecord, _case_seed: u64) -> Result<Vec<f32>> {
        let c = set.n_classes();
        let max = (0..c as u32).map(|cl| self.popularity.count(cl)).max().unwrap_or(0);
        let mut scores: Vec<f32> =
            (0..c as u32).map(|cl| self.popularity.count(cl) as f32).collect();
        // The repeat prediction outranks every popularity count.
        scores[record.previous_class as usize] = max as f32 + 1.0;
        Ok(scores)
    }
}

/// Euclidean k-nearest-neighbour voting over standardized numericals and
/// one-hot categoricals.
pub struct KnnScorer {
    features: Vec<f32>,
    width: usize,
    targets: Vec<u32>,
    pub k: usize,
    encoders: Encoders,
    n_classes: usize,
}

impl KnnScorer {
    pub const DEFAULT_K: usize = 25;

    pub fn fit(set: &ContractSet, train_idx: &[usize], encoders: &Encoders, k: usize) -> Result<Self> {
        if train_idx.is_empty() {
            return Err(Error::Config("knn needs a non-empty train split".into()));
        }
        if k == 0 || k > train_idx.len() {
            return Err(Error::Argument(format!(
                "k={k} outside [1, train size {}]",
                train_idx.len()
            )));
        }
        let n_classes = set.n_classes();
        let width = Self::row_width(set, encoders);
        let mut features = Vec::with_capacity(train_idx.len() * width);
        let mut targets = Vec::with_capacity(train_idx.len());
        for &i in train_idx {
            Self::push_row(&set.records[i], encoders, n_classes, &mut features);
            targets.push(set.records[i].target_class);
        }
        Ok(Self { features, width, targets, k, encoders: encoders.clone(), n_classes })
    }

    fn row_width(set: &ContractSet, encoders: &Encoders) -> usize {
        let one_hot: usize = encoders.vocabs.iter().map(|v| v.cardinality()).sum();
        set.schema.numerical_names().len() + one_hot + set.n_classes()
    }

    fn push_row(record: &ContractRecord, encoders: &Encoders, n_classes: usize, out: &mut Vec<f32>) {
        out.extend(encoders.standardizer.apply(&record.numericals));
        for (vocab, value) in encoders.vocabs.iter().zip(&record.categoricals) {
            let idx = vocab.lookup(value) as usize;
            let start = out.len();
            out.resize(start + vocab.cardinality(), 0.0);
            out[start + idx] = 1.0;
        }
        let start = out.len();
        out.resize(start + n_classes, 0.0);
        out[start + record.previous_class as usize] = 1.0;
    }

    /// Vote counts per class over the k nearest training records.
    pub fn votes(&self, record: &ContractRecord) -> Vec<u32> {
        let mut query = Vec::with_capacity(self.width);
        Self::push_row(record, &self.encoders, self.n_classes, &mut query);
        let mut dists: Vec<(f32, usize)> = self
            .features
            .chunks(self.width)
            .enumerate()
            .map(|(i, row)| {
                let d: f32 = row.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        // Deterministic neighbour set: distance ties resolved by train index.
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut votes = vec![0u32; self.n_classes];
        for &(_, i) in dists.iter().take(self.k) {
            votes[self.targets[i] as usize] += 1;
        }
        votes
    }

    /// Full class ranking by vote count, ties by ascending class id.
    pub fn ranking(&self, record: &ContractRecord, top: usize) -> Vec<u32> {
        let votes = self.votes(record);
        let mut order: Vec<u32> = (0..self.n_classes as u32).collect();
        order.sort_by(|&a, &b| {
            votes[b as usize].cmp(&votes[a as usize]).then_with(|| a.cmp(&b))
        });
        order.truncate(top);
        order
    }
}

impl ClassScorer for KnnScorer {
    fn name(&self) -> &str {
        "knn"
    }

    fn class_scores(&self, _set: &ContractSet, record: &ContractRecord, _case_seed: u64) -> Result<Vec<f32>> {
        Ok(self.votes(record).into_iter().map(|v| v as f32).collect())
    }
}

pub struct RandomClassScorer;

impl ClassScorer for RandomClassScorer {
    fn name(&self) -> &str {
        "random"
    }

    fn class_scores(&self, set: &ContractSet, _record: &ContractRecord, case_seed: u64) -> Result<Vec<f32>> {
        let mut rng = stream(case_seed, Stream::Scorer, 0);
        Ok((0..set.n_classes()).map(|_| rng.random::<f32>()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeat_appears_once_at_position_one() {
        // Class 2 is both the previous class and the most popular.
        let pop = ClassPopularity::build(5, [2, 2, 2, 1, 1, 0].into_iter());
        let ranked = repeat_top_pop_ranking(2, &pop, 5);
        assert_eq!(ranked[0], 2);
        assert_eq!(ranked.iter().filter(|&&c| c == 2).count(), 1);
        // Remaining slots: count desc then id asc -> 1 (2 votes), 0 (1), 3, 4.
        assert_eq!(ranked, vec![2, 1, 0, 3, 4]);
        assert_eq!(ranked.len(), 5);
    }

    #[test]
    fn full_class_coverage_when_c_equals_top() {
        let pop = ClassPopularity::build(5, std::iter::empty());
        let ranked = repeat_top_pop_ranking(3, &pop, 5);
        let mut sorted = ranked.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }
}
