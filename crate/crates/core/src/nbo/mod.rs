//! Next-offer classifier over contract records: a deep embedding network
//! predicting the next vehicle class, its heuristic baselines, and
//! full-class-ranking evaluation.

mod baselines;
mod csv_io;
mod eval;
mod model;
mod synthetic;
#[cfg(test)]
mod tests;
mod train;
mod vocab;

pub use baselines::{repeat_top_pop_ranking, KnnScorer, RandomClassScorer, RepeatTopPopScorer, ClassPopularity};
pub use csv_io::{load_contracts, save_contracts, CONTRACTS_FILE, SCHEMA_FILE};
pub use eval::{evaluate_nbo, ClassScorer};
pub use model::{NboModel, NboNetScorer, EncodedBatch, NBO_KIND};
pub use synthetic::{generate_contracts, ContractsSyntheticConfig};
pub use train::{split_contracts, train_nbo, ContractSplit, NboEpochLog, NboOutcome};
pub use vocab::{Encoders, Standardizer, Vocab};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numerical,
    PreviousClass,
    TargetClass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
}

/// Typed column layout of a contract table, stored as a JSON sidecar next to
/// the CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractSchema {
    pub n_classes: usize,
    pub columns: Vec<ColumnDef>,
}

impl ContractSchema {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be >= 2".into()));
        }
        let prev = self.columns.iter().filter(|c| c.kind == ColumnKind::PreviousClass).count();
        let tgt = self.columns.iter().filter(|c| c.kind == ColumnKind::TargetClass).count();
        if prev != 1 || tgt != 1 {
            return Err(Error::Config(format!(
                "schema needs exactly one previous_class and one target_class column, got {prev}/{tgt}"
            )));
        }
        Ok(())
    }

    pub fn categorical_names(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn numerical_names(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numerical)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// One contract: raw categorical strings, numerical values, the previous
/// vehicle class, and the class of the vehicle chosen next.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractRecord {
    pub categoricals: Vec<String>,
    pub numericals: Vec<f32>,
    pub previous_class: u32,
    pub target_class: u32,
}

/// Schema plus validated records.
#[derive(Debug)]
pub struct ContractSet {
    pub schema: ContractSchema,
    pub records: Vec<ContractRecord>,
}

impl ContractSet {
    pub fn new(schema: ContractSchema, records: Vec<ContractRecord>) -> Result<Self> {
        schema.validate()?;
        let n_cat = schema.categorical_names().len();
        let n_num = schema.numerical_names().len();
        let c = schema.n_classes as u32;
        for (i, r) in records.iter().enumerate() {
            if r.categoricals.len() != n_cat || r.numericals.len() != n_num {
                return Err(Error::Config(format!(
                    "record {i} has {}/{} categorical/numerical values, schema wants {n_cat}/{n_num}",
                    r.categoricals.len(),
                    r.numericals.len()
                )));
            }
            if r.previous_class >= c || r.target_class >= c {
                return Err(Error::Config(format!(
                    "record {i} references class outside [0, {c})"
                )));
            }
            if r.numericals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: format!("numericals of record {i}") });
            }
        }
        Ok(Self { schema, records })
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Network and training configuration. `None` in the width fields means the
/// size rules apply: embedding dim `min(32, ceil(cardinality/2))` per
/// categorical, and contraction layers halving from the concatenated width
/// until at most 64.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NboConfig {
    pub embedding_dims: Option<Vec<usize>>,
    pub prev_class_embedding_dim: Option<usize>,
    pub numerical_encoder_widths: Vec<usize>,
    pub contraction_widths: Option<Vec<usize>>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub split_fractions: [f64; 3],
}

impl Default for NboConfig {
    fn default() -> Self {
        Self {
            embedding_dims: None,
            prev_class_embedding_dim: None,
            numerical_encoder_widths: vec![64, 32],
            contraction_widths: None,
            learning_rate: 1e-3,
            epochs: 40,
            batch_size: 256,
            seed: 42,
            split_fractions: [0.70, 0.10, 0.20],
        }
    }
}

impl NboConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_fractions.iter().any(|&f| f < 0.0) {
            return Err(Error::Config(format!(
                "split fractions must be non-negative and sum to 1, got {:?}",
                self.split_fractions
            )));
        }
        if self.numerical_encoder_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("numerical encoder widths must be positive".into()));
        }
        Ok(())
    }

    /// Embedding dim rule for a categorical of the given cardinality.
    pub fn embedding_dim_for(cardinality: usize) -> usize {
        32.min(cardinality.div_ceil(2)).max(1)
    }

    /// Contraction widths from the concatenated input width: halve until at
    /// most 64.
    pub fn contraction_rule(concat_width: usize) -> Vec<usize> {
        let mut widths = Vec::new();
        let mut w = concat_width;
        while w > 64 {
            w = w.div_ceil(2);
            widths.push(w);
        }
        widths
    }
}
