//! Point-wise non-sequential scorer: a feed-forward net over concatenated
//! dealer features, vehicle features and a relation indicator, trained with
//! sigmoid cross-entropy against uniformly sampled negatives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Relation, Split};
use crate::error::{Error, Result};
use crate::eval::{AuctionScorer, EvalCase};
use crate::nn::rng::{stream, Stream};
use crate::nn::{init, AdamHyper, AdamState, NodeId, ParamId, ParamSet, Scalar, Tape, TapeBinding, Tensor};

pub const POINTWISE_KIND: &str = "pointwise";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PointwiseConfig {
    pub hidden1: usize,
    pub hidden2: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PointwiseConfig {
    fn default() -> Self {
        Self {
            hidden1: 128,
            hidden2: 64,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 256,
            seed: 42,
        }
    }
}

impl PointwiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: PointwiseConfig,
    dealer_dim: usize,
    vehicle_dim: usize,
}

struct Ids {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w3: ParamId,
    b3: ParamId,
}

pub struct PointwiseModel<T: Scalar> {
    pub config: PointwiseConfig,
    pub dealer_dim: usize,
    pub vehicle_dim: usize,
    pub params: ParamSet<T>,
    ids: Ids,
}

impl<T: Scalar> PointwiseModel<T> {
    pub fn input_dim(&self) -> usize {
        self.dealer_dim + self.vehicle_dim + 1
    }

    pub fn new(config: PointwiseConfig, dealer_dim: usize, vehicle_dim: usize) -> Result<Self> {
        config.validate()?;
        let input = dealer_dim + vehicle_dim + 1;
        let mut params = ParamSet::new();
        let mut draw = 0u64;
        let mut next_rng = || {
            let r = stream(config.seed, Stream::Init, 0x70 + draw);
            draw += 1;
            r
        };
        let ids = Ids {
            w1: params.add("w1", init::xavier_uniform(&mut next_rng(), input, config.hidden1))?,
            b1: params.add("b1", init::zeros_vec(config.hidden1))?,
            w2: params.add("w2", init::xavier_uniform(&mut next_rng(), config.hidden1, config.hidden2))?,
            b2: params.add("b2", init::zeros_vec(config.hidden2))?,
            w3: params.add("w3", init::xavier_uniform(&mut next_rng(), config.hidden2, 1))?,
            b3: params.add("b3", init::zeros_vec(1))?,
        };
        Ok(Self { config, dealer_dim, vehicle_dim, params, ids })
    }

    fn from_parts(
        config: PointwiseConfig,
        dealer_dim: usize,
        vehicle_dim: usize,
        params: ParamSet<T>,
    ) -> Result<Self> {
        let template = Self::new(config.clone(), dealer_dim, vehicle_dim)?;
        for (_, want) in template.params.iter() {
            let pid = params
                .lookup(&want.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {:?}", want.name)))?;
            if params.value(pid).shape() != want.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} shape {:?} != {:?}",
                    want.name,
                    params.value(pid).shape(),
                    want.value.shape()
                )));
            }
        }
        let ids = Ids {
            w1: params.lookup("w1").unwrap(),
            b1: params.lookup("b1").unwrap(),
            w2: params.lookup("w2").unwrap(),
            b2: params.lookup("b2").unwrap(),
            w3: params.lookup("w3").unwrap(),
            b3: params.lookup("b3").unwrap(),
        };
        Ok(Self { config, dealer_dim, vehicle_dim, params, ids })
    }

    /// Scores for a `[rows, input_dim]` batch; output node has `rows` values.
    pub fn forward(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        binding: &mut TapeBinding,
        rows: Tensor<T>,
    ) -> Result<NodeId> {
        if rows.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "pointwise_forward",
                detail: format!("input width {} vs expected {}", rows.cols(), self.input_dim()),
            });
        }
        let x = tape.constant(rows)?;
        let w1 = binding.bind(tape, params, self.ids.w1)?;
        let b1 = binding.bind(tape, params, self.ids.b1)?;
        let w2 = binding.bind(tape, params, self.ids.w2)?;
        let b2 = binding.bind(tape, params, self.ids.b2)?;
        let w3 = binding.bind(tape, params, self.ids.w3)?;
        let b3 = binding.bind(tape, params, self.ids.b3)?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, w2)?;
        let h = tape.add_bias(h, b2)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, w3)?;
        tape.add_bias(h, b3)
    }

    /// Sigmoid cross-entropy over labeled rows.
    pub fn training_loss(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        binding: &mut TapeBinding,
        rows: Tensor<T>,
        signs: Vec<i8>,
    ) -> Result<NodeId> {
        let n = signs.len();
        let scores = self.forward(params, tape, binding, rows)?;
        let w = T::from_f64(1.0 / n.max(1) as f64);
        tape.logistic_loss(scores, signs, vec![w; n])
    }

    /// Inference scores for feature rows.
    pub fn score_rows(&self, rows: Tensor<T>) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let mut binding = TapeBinding::new();
        let scores = self.forward(&self.params, &mut tape, &mut binding, rows)?;
        Ok(tape.value(scores).data().iter().map(|v| v.to_f64() as f32).collect())
    }

    pub fn input_row(&self, dealer: &[f32], vehicle: &[f32], relation: Relation) -> Vec<T> {
        let mut row = Vec::with_capacity(self.input_dim());
        row.extend(dealer.iter().map(|&v| T::from_f64(v as f64)));
        row.extend(vehicle.iter().map(|&v| T::from_f64(v as f64)));
        row.push(if relation == Relation::Purchase { T::ONE } else { T::ZERO });
        row
    }
}

impl PointwiseModel<f32> {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = Meta {
            config: self.config.clone(),
            dealer_dim: self.dealer_dim,
            vehicle_dim: self.vehicle_dim,
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| Error::Checkpoint(format!("serializing hyperparams: {e}")))?;
        crate::checkpoint::save(path, POINTWISE_KIND, &json, &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = crate::checkpoint::load_expecting(path, POINTWISE_KIND)?;
        let meta: Meta = serde_json::from_str(&ckpt.hyperparams_json)
            .map_err(|e| Error::Checkpoint(format!("bad hyperparams payload: {e}")))?;
        Self::from_parts(meta.config, meta.dealer_dim, meta.vehicle_dim, ckpt.params)
    }
}

/// Train on the split's interactions: every train row is a positive, paired
/// with one uniformly sampled negative vehicle for the same dealer and
/// relation.
pub fn train_pointwise(
    ds: &Dataset,
    split: &Split,
    config: &PointwiseConfig,
) -> Result<PointwiseModel<f32>> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("empty train split".into()));
    }
    let mut model =
        PointwiseModel::<f32>::new(config.clone(), ds.dealer_feature_dim(), ds.vehicle_feature_dim())?;
    let mut adam = AdamState::new(&model.params, AdamHyper::with_lr(config.learning_rate));
    let input = model.input_dim();
    let n_vehicles = ds.n_vehicles();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = split.train.clone();
        let mut shuffle_rng = stream(config.seed, Stream::Shuffle, 0x50_0000 + epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut neg_rng = stream(
                config.seed,
                Stream::Negatives,
                0x50_0000 + ((epoch as u64) << 24 | batch_idx as u64),
            );
            let mut rows = Vec::with_capacity(chunk.len() * 2 * input);
            let mut signs = Vec::with_capacity(chunk.len() * 2);
            for &i in chunk {
                let it = &ds.interactions[i];
                let dealer = &ds.dealers[ds.dealer_pos(it.dealer_id).expect("validated")];
                let vpos = ds.vehicle_pos(it.vehicle_id).expect("validated");
                rows.extend(model.input_row(
                    &dealer.features,
                    &ds.vehicles[vpos].features,
                    it.relation,
                ));
                signs.push(1i8);
                let mut neg = neg_rng.random_range(0..n_vehicles);
                for _ in 0..8 {
                    if neg != vpos || n_vehicles == 1 {
                        break;
                    }
                    neg = neg_rng.random_range(0..n_vehicles);
                }
                rows.extend(model.input_row(
                    &dealer.features,
                    &ds.vehicles[neg].features,
                    it.relation,
                ));
                signs.push(-1i8);
            }
            let batch = Tensor::new(vec![signs.len(), input], rows)?;
            let mut tape = Tape::new();
            let mut binding = TapeBinding::new();
            let loss = model.training_loss(&model.params, &mut tape, &mut binding, batch, signs)?;
            tape.backward(loss)?;
            binding.collect_grads(&tape, &mut model.params);
            adam.step(&mut model.params)?;
        }
    }
    Ok(model)
}

/// Evaluation adapter; candidates are scored as purchase interactions.
pub struct PointwiseScorer<'a> {
    pub model: &'a PointwiseModel<f32>,
}

impl AuctionScorer for PointwiseScorer<'_> {
    fn name(&self) -> &str {
        POINTWISE_KIND
    }

    fn score_case(&self, ds: &Dataset, case: &EvalCase<'_>) -> Result<Vec<f32>> {
        let input = self.model.input_dim();
        let mut rows = Vec::with_capacity(case.candidates.len() * input);
        for &v in &case.candidates {
            rows.extend(self.model.input_row(
                &case.dealer.features,
                &ds.vehicles[v].features,
                Relation::Purchase,
            ));
        }
        self.model.score_rows(Tensor::new(vec![case.candidates.len(), input], rows)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GRAD_CHECK_EPSILON};

    #[test]
    fn zeroed_model_scores_are_constant() {
        let mut model = PointwiseModel::<f32>::new(PointwiseConfig::default(), 3, 4).unwrap();
        for name in ["w1", "w2", "w3", "b1", "b2", "b3"] {
            let id = model.params.lookup(name).unwrap();
            model.params.value_mut(id).fill(0.0);
        }
        let r1 = model.input_row(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0, 7.0], Relation::Purchase);
        let r2 = model.input_row(&[-1.0, 0.0, 1.0], &[0.0, 0.0, 0.0, 1.0], Relation::Bid);
        let rows = Tensor::new(vec![2, 8], [r1, r2].concat()).unwrap();
        let scores = model.score_rows(rows).unwrap();
        assert_eq!(scores, vec![0.0, 0.0]);
    }

    #[test]
    fn toy_loss_passes_grad_check() {
        let config = PointwiseConfig { hidden1: 6, hidden2: 4, seed: 2, ..Default::default() };
        let model = PointwiseModel::<f64>::new(config, 3, 4).unwrap();
        let mut rng = stream(1, Stream::Init, 77);
        let rows: Vec<f64> = (0..5 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = Tensor::new(vec![5, 8], rows).unwrap();
        let signs = vec![1i8, -1, 1, -1, 1];
        let mut params = model.params.cast::<f64>();
        let err = grad_check(
            &mut params,
            &|ps: &ParamSet<f64>, tape: &mut Tape<f64>| {
                let mut binding = TapeBinding::new();
                let loss =
                    model.training_loss(ps, tape, &mut binding, rows.clone(), signs.clone())?;
                Ok((loss, binding.bound().to_vec()))
            },
            GRAD_CHECK_EPSILON,
            8,
            3,
        )
        .unwrap();
        assert!(err < 1e-5, "pointwise grad check failed: {err}");
    }
}
