//! Random split, cross-entropy training, best-validation selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng::{stream, Stream};
use crate::nn::{AdamHyper, AdamState, Tape, TapeBinding};

use super::eval::evaluate_nbo;
use super::model::{NboModel, NboNetScorer};
use super::{ContractSet, Encoders, NboConfig};

/// Epochs without validation improvement before training stops.
const PATIENCE: usize = 10;

#[derive(Clone, Debug)]
pub struct ContractSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random partition by the configured fractions.
pub fn split_contracts(set: &ContractSet, fractions: [f64; 3], seed: u64) -> ContractSplit {
    let n = set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, Stream::Shuffle, 0xc0117ac7);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (fractions[0] * n as f64).floor() as usize;
    let n_val = (fractions[1] * n as f64).floor() as usize;
    ContractSplit {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NboEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_hr5: f64,
    pub val_ndcg5: f64,
}

pub struct NboOutcome {
    pub model: NboModel<f32>,
    pub split: ContractSplit,
    pub log: Vec<NboEpochLog>,
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

pub fn train_nbo(set: &ContractSet, config: &NboConfig) -> Result<NboOutcome> {
    config.validate()?;
    let split = split_contracts(set, config.split_fractions, config.seed);
    if split.train.is_empty() {
        return Err(Error::Config("empty train split".into()));
    }
    let encoders = Encoders::fit(set, &split.train);

    let mut warnings = Vec::new();
    {
        let mut seen = vec![false; set.n_classes()];
        for &i in &split.train {
            seen[set.records[i].target_class as usize] = true;
        }
        for (c, &s) in seen.iter().enumerate() {
            if !s {
                warnings.push(format!(
                    "class {c} absent from train split; it stays predictable but starts untrained"
                ));
            }
        }
    }

    let mut model = NboModel::<f32>::new(config.clone(), set.schema.clone(), encoders)?;
    let mut adam = AdamState::new(&model.params, AdamHyper::with_lr(config.learning_rate));
    let k_val = 5.min(set.n_classes());

    let mut log = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_hr = f64::NEG_INFINITY;
    let mut best_params = None;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        let mut order = split.train.clone();
        let mut shuffle_rng = stream(config.seed, Stream::Shuffle, 0xb0 + epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let records: Vec<&super::ContractRecord> =
                chunk.iter().map(|&i| &set.records[i]).collect();
            let batch = model.encode_records(&records)?;
            let mut tape = Tape::new();
            let mut binding = TapeBinding::new();
            let loss = model.training_loss(&model.params, &mut tape, &mut binding, &batch)?;
            loss_sum += tape.value(loss).data()[0] as f64;
            tape.backward(loss)?;
            binding.collect_grads(&tape, &mut model.params);
            adam.step(&mut model.params)?;
            batches += 1;
        }
        let train_loss = loss_sum / batches.max(1) as f64;

        let (val_hr5, val_ndcg5) = if split.val.is_empty() {
            (0.0, 0.0)
        } else {
            let report =
                evaluate_nbo(&NboNetScorer { model: &model }, set, &split.val, &[k_val], config.seed)?;
            (
                report.metrics[&format!("hr@{k_val}")],
                report.metrics[&format!("ndcg@{k_val}")],
            )
        };
        log.push(NboEpochLog { epoch, train_loss, val_hr5, val_ndcg5 });

        if split.val.is_empty() {
            best_epoch = epoch;
        } else if val_hr5 > best_hr {
            best_hr = val_hr5;
            best_epoch = epoch;
            best_params = Some(model.params.cast::<f32>());
            stale = 0;
        } else {
            stale += 1;
            if stale >= PATIENCE {
                break;
            }
        }
    }

    if let Some(best) = best_params {
        model = NboModel::from_parts(
            config.clone(),
            set.schema.clone(),
            model.encoders.clone(),
            best,
        )?;
    }
    Ok(NboOutcome { model, split, log, best_epoch, warnings })
}
