//! Categorical vocabularies and numerical standardization, fit on training
//! records only.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ContractSet;

/// Index map for one categorical variable. Index 0 is the reserved unknown
/// token; known values are numbered by first occurrence in the training
/// records.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Vocab {
    values: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn build<'a>(values: impl Iterator<Item = &'a str>) -> Self {
        let mut v = Self { values: Vec::new(), index: HashMap::new() };
        for s in values {
            if !v.index.contains_key(s) {
                v.index.insert(s.to_string(), v.values.len() as u32 + 1);
                v.values.push(s.to_string());
            }
        }
        v
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .values
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32 + 1))
            .collect();
    }

    /// 0 for unseen values, 1.. for known ones.
    pub fn lookup(&self, value: &str) -> u32 {
        self.index.get(value).copied().unwrap_or(0)
    }

    /// Table size including the unknown slot.
    pub fn cardinality(&self) -> usize {
        self.values.len() + 1
    }

    pub fn known(&self) -> &[String] {
        &self.values
    }
}

/// Per-column mean/std fitted on train rows; zero-variance columns pass
/// through unscaled.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f32]> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0f64; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
            count += 1;
        }
        if count > 0 {
            mean.iter_mut().for_each(|m| *m /= count as f64);
        }
        let mut var = vec![0.0f64; dim];
        for row in rows {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = if count > 0 { (s / count as f64).sqrt() } else { 0.0 };
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, row: &[f32]) -> Vec<f32> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| ((v as f64 - m) / s) as f32)
            .collect()
    }
}

/// Frozen encoders: one vocabulary per categorical column plus numerical
/// statistics.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Encoders {
    pub vocabs: Vec<Vocab>,
    pub standardizer: Standardizer,
}

impl Encoders {
    /// Fit from the given training rows only.
    pub fn fit(set: &ContractSet, train_idx: &[usize]) -> Self {
        let n_cat = set.schema.categorical_names().len();
        let n_num = set.schema.numerical_names().len();
        let vocabs = (0..n_cat)
            .map(|c| {
                Vocab::build(
                    train_idx
                        .iter()
                        .map(|&i| set.records[i].categoricals[c].as_str()),
                )
            })
            .collect();
        let standardizer = Standardizer::fit(
            train_idx.iter().map(|&i| set.records[i].numericals.as_slice()),
            n_num,
        );
        Self { vocabs, standardizer }
    }

    /// Restore lookup tables after deserialization.
    pub fn after_load(&mut self) {
        for v in &mut self.vocabs {
            v.rebuild_index();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_occurrence_order_with_unknown_zero() {
        let v = Vocab::build(["a", "b", "a"].into_iter());
        assert_eq!(v.lookup("a"), 1);
        assert_eq!(v.lookup("b"), 2);
        assert_eq!(v.lookup("c"), 0);
        assert_eq!(v.cardinality(), 3);
    }

    #[test]
    fn vocab_is_deterministic() {
        let a = Vocab::build(["x", "y", "z", "x"].into_iter());
        let b = Vocab::build(["x", "y", "z", "x"].into_iter());
        assert_eq!(a, b);
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let rows: Vec<Vec<f32>> = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        // Second column has zero variance and passes through.
        assert_eq!(s.std[1], 1.0);
        let out = s.apply(&[1.0, 5.0]);
        assert!((out[0] + 1.0).abs() < 1e-6);
        assert_eq!(out[1], 0.0);
    }

    #[test]
    fn serde_roundtrip_restores_lookup() {
        let v = Vocab::build(["p", "q"].into_iter());
        let json = serde_json::to_string(&v).unwrap();
        let mut back: Vocab = serde_json::from_str(&json).unwrap();
        back.rebuild_index();
        assert_eq!(back.lookup("q"), 2);
        assert_eq!(back.lookup("zz"), 0);
    }
}
