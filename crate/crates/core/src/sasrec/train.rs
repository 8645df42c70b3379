//! Training loop: per-dealer next-interaction sequences, uniform negative
//! sampling, Adam, per-epoch validation with early stopping on HR@20.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Relation, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalProtocol};
use crate::nn::rng::{stream, Stream};
use crate::nn::{AdamHyper, AdamState, ParamSet, Tape, TapeBinding, Tensor};

use super::model::{HistEntry, SasrecModel, SasrecScorer, TrainBatch};
use super::SasrecConfig;

/// Epochs without validation improvement before training stops.
pub const PATIENCE: usize = 10;

/// One line of the JSONL training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_hr20: f64,
    pub val_ndcg20: f64,
}

pub struct TrainOutcome {
    pub model: SasrecModel<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Validation protocol sized to the dataset: the standard 103-negative pool
/// when every validation dealer can supply it, shrunk on toy datasets, and
/// `None` when validation is impossible.
fn validation_protocol(ds: &Dataset, split: &Split, seed: u64) -> Option<EvalProtocol> {
    if split.val.is_empty() {
        return None;
    }
    let min_eligible = split
        .val
        .iter()
        .map(|case| {
            let distinct: std::collections::HashSet<u32> = ds
                .dealer_history(case.dealer_pos)
                .iter()
                .map(|&i| ds.interactions[i].vehicle_id)
                .collect();
            ds.n_vehicles() - distinct.len()
        })
        .min()
        .unwrap_or(0);
    let negatives = min_eligible.min(103);
    if negatives == 0 {
        return None;
    }
    let k = 20.min(negatives + 1);
    Some(EvalProtocol { k: vec![k], negatives, seed })
}

/// Chronological per-dealer training sequences (interaction indices).
fn dealer_sequences(ds: &Dataset, split: &Split, include_bids: bool) -> Vec<Vec<usize>> {
    let mut per_dealer: Vec<Vec<usize>> = vec![Vec::new(); ds.n_dealers()];
    for &i in &split.train {
        let it = &ds.interactions[i];
        if !include_bids && it.relation == Relation::Bid {
            continue;
        }
        per_dealer[ds.dealer_pos(it.dealer_id).expect("validated")].push(i);
    }
    for seq in &mut per_dealer {
        seq.sort_by_key(|&i| (ds.interactions[i].timestamp, i));
    }
    per_dealer.retain(|seq| seq.len() >= 2);
    per_dealer
}

/// Assemble one training batch: inputs are each sequence shifted by one, the
/// target at a position is the next interaction, and every target gets
/// `negatives_per_position` uniform vehicle draws.
fn build_train_batch(
    model: &SasrecModel<f32>,
    ds: &Dataset,
    sequences: &[&Vec<usize>],
    neg_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<TrainBatch<f32>> {
    let n = model.config.max_seq_len;
    let f = model.feature_dim;
    let mut histories: Vec<Vec<HistEntry<'_>>> = Vec::with_capacity(sequences.len());
    let mut targets: Vec<Option<(usize, Relation)>> = Vec::with_capacity(sequences.len() * n);

    for seq in sequences {
        // Keep the most recent n (input, next-target) pairs.
        let pairs = seq.len() - 1;
        let take = pairs.min(n);
        let start = pairs - take;
        let inputs = &seq[start..seq.len() - 1];
        let nexts = &seq[start + 1..];
        let pad = n - take;
        histories.push(
            inputs
                .iter()
                .map(|&i| {
                    let it = &ds.interactions[i];
                    HistEntry {
                        features: &ds.vehicles[ds.vehicle_pos(it.vehicle_id).expect("validated")]
                            .features,
                        relation: it.relation,
                    }
                })
                .collect(),
        );
        for _ in 0..pad {
            targets.push(None);
        }
        for &i in nexts {
            let it = &ds.interactions[i];
            targets.push(Some((
                ds.vehicle_pos(it.vehicle_id).expect("validated"),
                it.relation,
            )));
        }
    }

    let seq_batch = model.build_seq_batch(&histories)?;
    let rows = seq_batch.b * n;
    debug_assert_eq!(targets.len(), rows);

    let mut pos_features = vec![0f32; rows * f];
    let mut target_relation = Vec::with_capacity(rows);
    for (r, t) in targets.iter().enumerate() {
        match t {
            Some((vpos, rel)) => {
                pos_features[r * f..(r + 1) * f].copy_from_slice(&ds.vehicles[*vpos].features);
                target_relation.push(Some(*rel));
            }
            None => target_relation.push(None),
        }
    }

    let n_vehicles = ds.n_vehicles();
    let mut neg_features = Vec::with_capacity(model.config.negatives_per_position);
    for _ in 0..model.config.negatives_per_position {
        let mut buf = vec![0f32; rows * f];
        for (r, t) in targets.iter().enumerate() {
            if let Some((vpos, _)) = t {
                let mut neg = neg_rng.random_range(0..n_vehicles);
                for _ in 0..8 {
                    if neg != *vpos || n_vehicles == 1 {
                        break;
                    }
                    neg = neg_rng.random_range(0..n_vehicles);
                }
                buf[r * f..(r + 1) * f].copy_from_slice(&ds.vehicles[neg].features);
            }
        }
        neg_features.push(Tensor::new(vec![rows, f], buf)?);
    }

    Ok(TrainBatch {
        seq: seq_batch,
        pos_features: Tensor::new(vec![rows, f], pos_features)?,
        neg_features,
        target_relation,
    })
}

/// One optimizer step over a batch; returns the scalar loss.
pub fn training_step(
    model: &mut SasrecModel<f32>,
    batch: &TrainBatch<f32>,
    adam: &mut AdamState<f32>,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut binding = TapeBinding::new();
    let loss = model.training_loss(
        &model.params,
        &mut tape,
        &mut binding,
        batch,
        model.config.dropout,
        dropout_rng,
    )?;
    let loss_value = tape.value(loss).data()[0] as f64;
    tape.backward(loss)?;
    binding.collect_grads(&tape, &mut model.params);
    adam.step(&mut model.params)?;
    Ok(loss_value)
}

pub fn train(ds: &Dataset, split: &Split, config: &SasrecConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let sequences = dealer_sequences(ds, split, config.include_bids);
    if sequences.is_empty() {
        return Err(Error::Config(
            "empty train split: no dealer has two or more training interactions".into(),
        ));
    }

    let mut model = SasrecModel::<f32>::new(config.clone(), ds.vehicle_feature_dim())?;
    let mut adam = AdamState::new(&model.params, AdamHyper::with_lr(config.learning_rate));
    let val_protocol = validation_protocol(ds, split, config.seed);

    let mut log = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_hr = f64::NEG_INFINITY;
    let mut best_params: Option<ParamSet<f32>> = None;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        let mut shuffle_rng = stream(config.seed, Stream::Shuffle, epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let stream_idx = (epoch as u64) << 24 | batch_idx as u64;
            let mut neg_rng = stream(config.seed, Stream::Negatives, stream_idx);
            let mut dropout_rng = stream(config.seed, Stream::Dropout, stream_idx);
            let selected: Vec<&Vec<usize>> = chunk.iter().map(|&s| &sequences[s]).collect();
            let batch = build_train_batch(&model, ds, &selected, &mut neg_rng)?;
            let loss =
                training_step(&mut model, &batch, &mut adam, &mut dropout_rng).map_err(|e| {
                    Error::NonFinite {
                        context: format!("epoch {epoch} batch {batch_idx}: {e}"),
                    }
                })?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches.max(1) as f64;

        let (val_hr20, val_ndcg20) = match &val_protocol {
            None => (0.0, 0.0),
            Some(protocol) => {
                let report =
                    evaluate(&SasrecScorer { model: &model }, ds, &split.val, protocol)?;
                let k = protocol.k[0];
                (report.metrics[&format!("hr@{k}")], report.metrics[&format!("ndcg@{k}")])
            }
        };
        log.push(EpochLog { epoch, train_loss, val_hr20, val_ndcg20 });

        if val_protocol.is_none() {
            best_epoch = epoch;
        } else if val_hr20 > best_hr {
            best_hr = val_hr20;
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
        model = SasrecModel::from_parts(config.clone(), ds.vehicle_feature_dim(), best)?;
    }
    Ok(TrainOutcome { model, log, best_epoch })
}
