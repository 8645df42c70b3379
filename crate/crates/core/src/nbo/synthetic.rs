//! Synthetic contract generator with planted choice behavior: a configurable
//! repeat-previous-class rate plus an attribute-conditioned preference rule
//! mapping (occupation, region) into a small set of popular classes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng::{stream, Stream};

use super::{ColumnDef, ColumnKind, ContractRecord, ContractSchema, ContractSet};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ContractsSyntheticConfig {
    pub n_records: usize,
    pub n_classes: usize,
    pub n_occupations: usize,
    pub n_regions: usize,
    /// Probability that the next class repeats the previous one.
    pub repeat_rate: f64,
    /// Probability that the next class follows the attribute rule.
    pub rule_rate: f64,
    /// Image size of the attribute rule; small values concentrate demand on
    /// a few classes.
    pub rule_classes: usize,
    /// When true, the target is exactly the attribute rule for every record.
    pub deterministic_rule: bool,
    pub seed: u64,
}

impl Default for ContractsSyntheticConfig {
    fn default() -> Self {
        Self {
            n_records: 12_000,
            n_classes: 70,
            n_occupations: 12,
            n_regions: 10,
            repeat_rate: 0.55,
            rule_rate: 0.35,
            rule_classes: 16,
            deterministic_rule: false,
            seed: 42,
        }
    }
}

impl ContractsSyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_records == 0 || self.n_occupations == 0 || self.n_regions == 0 {
            return Err(Error::Config("record and vocabulary counts must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be >= 2".into()));
        }
        if self.rule_classes == 0 || self.rule_classes > self.n_classes {
            return Err(Error::Config(format!(
                "rule_classes {} outside [1, n_classes {}]",
                self.rule_classes, self.n_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.repeat_rate)
            || !(0.0..=1.0).contains(&self.rule_rate)
            || self.repeat_rate + self.rule_rate > 1.0
        {
            return Err(Error::Config(
                "repeat_rate and rule_rate must be in [0,1] and sum to at most 1".into(),
            ));
        }
        Ok(())
    }

    /// The planted attribute rule.
    pub fn rule_class(&self, occupation: usize, region: usize) -> u32 {
        ((occupation * 31 + region * 17 + 7) % self.rule_classes) as u32
    }
}

pub fn generate_contracts(config: &ContractsSyntheticConfig) -> Result<ContractSet> {
    config.validate()?;
    let schema = ContractSchema {
        n_classes: config.n_classes,
        columns: vec![
            ColumnDef { name: "occupation".into(), kind: ColumnKind::Categorical },
            ColumnDef { name: "region".into(), kind: ColumnKind::Categorical },
            ColumnDef { name: "credit_score".into(), kind: ColumnKind::Numerical },
            ColumnDef { name: "contract_duration".into(), kind: ColumnKind::Numerical },
            ColumnDef { name: "previous_class".into(), kind: ColumnKind::PreviousClass },
            ColumnDef { name: "target_class".into(), kind: ColumnKind::TargetClass },
        ],
    };
    let mut rng = stream(config.seed, Stream::Synthetic, 0xc0);
    let credit = Normal::new(650.0, 80.0).expect("valid");
    let durations = [12.0f32, 24.0, 36.0, 48.0];

    let mut records = Vec::with_capacity(config.n_records);
    for _ in 0..config.n_records {
        let occupation = rng.random_range(0..config.n_occupations);
        let region = rng.random_range(0..config.n_regions);
        let previous_class = rng.random_range(0..config.n_classes) as u32;
        let rule = config.rule_class(occupation, region);
        let target_class = if config.deterministic_rule {
            rule
        } else {
            let u: f64 = rng.random();
            if u < config.repeat_rate {
                previous_class
            } else if u < config.repeat_rate + config.rule_rate {
                rule
            } else {
                rng.random_range(0..config.n_classes) as u32
            }
        };
        records.push(ContractRecord {
            categoricals: vec![format!("occ{occupation}"), format!("reg{region}")],
            numericals: vec![
                credit.sample(&mut rng) as f32,
                durations[rng.random_range(0..durations.len())],
            ],
            previous_class,
            target_class,
        });
    }
    ContractSet::new(schema, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_repeat_rate_is_respected() {
        let config = ContractsSyntheticConfig { n_records: 20_000, seed: 5, ..Default::default() };
        let set = generate_contracts(&config).unwrap();
        let repeats = set
            .records
            .iter()
            .filter(|r| r.target_class == r.previous_class)
            .count();
        let rate = repeats as f64 / set.len() as f64;
        // repeat_rate plus accidental collisions from the rule and noise arms.
        assert!((rate - 0.56).abs() < 0.02, "observed repeat rate {rate}");
    }

    #[test]
    fn deterministic_rule_mode_has_single_target_per_cell() {
        let config = ContractsSyntheticConfig {
            n_records: 2000,
            deterministic_rule: true,
            seed: 8,
            ..Default::default()
        };
        let set = generate_contracts(&config).unwrap();
        for r in &set.records {
            let occ: usize = r.categoricals[0][3..].parse().unwrap();
            let reg: usize = r.categoricals[1][3..].parse().unwrap();
            assert_eq!(r.target_class, config.rule_class(occ, reg));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let config = ContractsSyntheticConfig { n_records: 500, ..Default::default() };
        let a = generate_contracts(&config).unwrap();
        let b = generate_contracts(&config).unwrap();
        assert_eq!(a.records, b.records);
    }
}
