//! Model parameters, the encoder graph, and inference paths.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Relation};
use crate::error::{Error, Result};
use crate::eval::{AuctionScorer, EvalCase};
use crate::nn::rng::{stream, Stream};
use crate::nn::{init, NodeId, ParamId, ParamSet, Scalar, Tape, TapeBinding, Tensor};

use super::SasrecConfig;

pub const MODEL_KIND: &str = "sasrec-auc";

/// Checkpoint hyperparameter payload.
#[derive(Serialize, Deserialize)]
struct Meta {
    config: SasrecConfig,
    feature_dim: usize,
}

struct BlockIds {
    attn_ln: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ffn_ln: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct Ids {
    feature_proj: ParamId,
    pos_emb: ParamId,
    rel_emb: ParamId,
    blocks: Vec<BlockIds>,
    final_ln: (ParamId, ParamId),
}

/// One history element: the item's feature vector plus the relation the
/// dealer had with it.
#[derive(Clone, Copy)]
pub struct HistEntry<'a> {
    pub features: &'a [f32],
    pub relation: Relation,
}

/// Left-padded fixed-length sequence batch.
pub struct SeqBatch<T> {
    pub b: usize,
    pub n: usize,
    pub features: Tensor<T>,
    pub pos_idx: Vec<u32>,
    pub rel_idx: Vec<u32>,
    pub pads: Vec<usize>,
}

/// Sequence batch plus per-position targets for next-interaction training.
pub struct TrainBatch<T> {
    pub seq: SeqBatch<T>,
    /// `[b*n, F]`; zero rows where masked.
    pub pos_features: Tensor<T>,
    /// One `[b*n, F]` tensor per negative slot.
    pub neg_features: Vec<Tensor<T>>,
    /// Target relation per row; `None` marks padding rows excluded from the
    /// loss.
    pub target_relation: Vec<Option<Relation>>,
}

pub struct SasrecModel<T: Scalar> {
    pub config: SasrecConfig,
    pub feature_dim: usize,
    pub params: ParamSet<T>,
    ids: Ids,
}

impl<T: Scalar> SasrecModel<T> {
    pub fn new(config: SasrecConfig, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        let d = config.embed_dim;
        let mut params = ParamSet::new();
        let mut draw = 0u64;
        let mut next_rng = || {
            let r = stream(config.seed, Stream::Init, draw);
            draw += 1;
            r
        };

        let feature_proj = params.add(
            "feature_proj",
            init::xavier_uniform(&mut next_rng(), feature_dim, d),
        )?;
        let pos_emb = params.add(
            "pos_emb",
            init::normal(&mut next_rng(), vec![config.max_seq_len, d], 0.02),
        )?;
        let rel_emb = params.add("rel_emb", init::normal(&mut next_rng(), vec![2, d], 0.02))?;

        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let attn_ln = (
                params.add(format!("block{i}.attn.ln.gain"), init::ones(d))?,
                params.add(format!("block{i}.attn.ln.bias"), init::zeros_vec(d))?,
            );
            let wq = params.add(format!("block{i}.attn.wq"), init::xavier_uniform(&mut next_rng(), d, d))?;
            let wk = params.add(format!("block{i}.attn.wk"), init::xavier_uniform(&mut next_rng(), d, d))?;
            let wv = params.add(format!("block{i}.attn.wv"), init::xavier_uniform(&mut next_rng(), d, d))?;
            let wo = params.add(format!("block{i}.attn.wo"), init::xavier_uniform(&mut next_rng(), d, d))?;
            let ffn_ln = (
                params.add(format!("block{i}.ffn.ln.gain"), init::ones(d))?,
                params.add(format!("block{i}.ffn.ln.bias"), init::zeros_vec(d))?,
            );
            let w1 = params.add(format!("block{i}.ffn.w1"), init::xavier_uniform(&mut next_rng(), d, d))?;
            let b1 = params.add(format!("block{i}.ffn.b1"), init::zeros_vec(d))?;
            let w2 = params.add(format!("block{i}.ffn.w2"), init::xavier_uniform(&mut next_rng(), d, d))?;
            let b2 = params.add(format!("block{i}.ffn.b2"), init::zeros_vec(d))?;
            blocks.push(BlockIds { attn_ln, wq, wk, wv, wo, ffn_ln, w1, b1, w2, b2 });
        }
        let final_ln = (
            params.add("final_ln.gain", init::ones(d))?,
            params.add("final_ln.bias", init::zeros_vec(d))?,
        );

        Ok(Self {
            config,
            feature_dim,
            params,
            ids: Ids { feature_proj, pos_emb, rel_emb, blocks, final_ln },
        })
    }

    /// Rebuild the id table against an externally provided parameter set
    /// (checkpoint load, best-epoch restore); validates presence and shapes.
    pub(crate) fn from_parts(config: SasrecConfig, feature_dim: usize, params: ParamSet<T>) -> Result<Self> {
        let template = SasrecModel::<T>::new(config.clone(), feature_dim)?;
        if params.len() != template.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: checkpoint has {}, model wants {}",
                params.len(),
                template.params.len()
            )));
        }
        for (_, want) in template.params.iter() {
            let Some(pid) = params.lookup(&want.name) else {
                return Err(Error::Checkpoint(format!("missing parameter {:?}", want.name)));
            };
            if params.value(pid).shape() != want.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} has shape {:?}, expected {:?}",
                    want.name,
                    params.value(pid).shape(),
                    want.value.shape()
                )));
            }
        }
        let ids = Ids {
            feature_proj: params.lookup("feature_proj").unwrap(),
            pos_emb: params.lookup("pos_emb").unwrap(),
            rel_emb: params.lookup("rel_emb").unwrap(),
            blocks: (0..template.config.blocks)
                .map(|i| BlockIds {
                    attn_ln: (
                        params.lookup(&format!("block{i}.attn.ln.gain")).unwrap(),
                        params.lookup(&format!("block{i}.attn.ln.bias")).unwrap(),
                    ),
                    wq: params.lookup(&format!("block{i}.attn.wq")).unwrap(),
                    wk: params.lookup(&format!("block{i}.attn.wk")).unwrap(),
                    wv: params.lookup(&format!("block{i}.attn.wv")).unwrap(),
                    wo: params.lookup(&format!("block{i}.attn.wo")).unwrap(),
                    ffn_ln: (
                        params.lookup(&format!("block{i}.ffn.ln.gain")).unwrap(),
                        params.lookup(&format!("block{i}.ffn.ln.bias")).unwrap(),
                    ),
                    w1: params.lookup(&format!("block{i}.ffn.w1")).unwrap(),
                    b1: params.lookup(&format!("block{i}.ffn.b1")).unwrap(),
                    w2: params.lookup(&format!("block{i}.ffn.w2")).unwrap(),
                    b2: params.lookup(&format!("block{i}.ffn.b2")).unwrap(),
                })
                .collect(),
            final_ln: (
                params.lookup("final_ln.gain").unwrap(),
                params.lookup("final_ln.bias").unwrap(),
            ),
        };
        Ok(Self { config: template.config, feature_dim, params, ids })
    }

    /// Assemble a left-padded batch from raw histories. Longer histories are
    /// silently truncated to the most recent `max_seq_len` entries.
    pub fn build_seq_batch(&self, histories: &[Vec<HistEntry<'_>>]) -> Result<SeqBatch<T>> {
        let n = self.config.max_seq_len;
        let f = self.feature_dim;
        let b = histories.len();
        if b == 0 {
            return Err(Error::Argument("empty history batch".into()));
        }
        let mut features = vec![T::ZERO; b * n * f];
        let mut pos_idx = vec![0u32; b * n];
        let mut rel_idx = vec![0u32; b * n];
        let mut pads = Vec::with_capacity(b);
        for (s, hist) in histories.iter().enumerate() {
            let take = hist.len().min(n);
            let pad = n - take;
            pads.push(pad);
            let tail = &hist[hist.len() - take..];
            for (slot, entry) in tail.iter().enumerate() {
                if entry.features.len() != f {
                    return Err(Error::Shape {
                        op: "build_seq_batch",
                        detail: format!(
                            "history entry has {} features, expected {f}",
                            entry.features.len()
                        ),
                    });
                }
                let row = s * n + pad + slot;
                for (c, &v) in entry.features.iter().enumerate() {
                    features[row * f + c] = T::from_f64(v as f64);
                }
                rel_idx[row] = entry.relation.index();
            }
            for t in 0..n {
                pos_idx[s * n + t] = t as u32;
            }
        }
        Ok(SeqBatch {
            b,
            n,
            features: Tensor::new(vec![b * n, f], features)?,
            pos_idx,
            rel_idx,
            pads,
        })
    }

    /// Encoder graph: projected features + positional + relation embeddings
    /// through pre-norm causal attention blocks. Returns `[b*n, d]` hidden
    /// states.
    pub fn encode(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        binding: &mut TapeBinding,
        batch: &SeqBatch<T>,
        dropout: f64,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let feats = tape.constant(batch.features.clone())?;
        let wf = binding.bind(tape, params, self.ids.feature_proj)?;
        let proj = tape.matmul(feats, wf)?;
        let pos_table = binding.bind(tape, params, self.ids.pos_emb)?;
        let pos = tape.gather(pos_table, batch.pos_idx.clone())?;
        let rel_table = binding.bind(tape, params, self.ids.rel_emb)?;
        let rel = tape.gather(rel_table, batch.rel_idx.clone())?;
        let sum = tape.add(proj, pos)?;
        let sum = tape.add(sum, rel)?;
        let mut x = tape.dropout(sum, dropout, dropout_rng)?;

        for block in &self.ids.blocks {
            let g = binding.bind(tape, params, block.attn_ln.0)?;
            let bta = binding.bind(tape, params, block.attn_ln.1)?;
            let normed = tape.layer_norm(x, g, bta)?;
            let wq = binding.bind(tape, params, block.wq)?;
            let wk = binding.bind(tape, params, block.wk)?;
            let wv = binding.bind(tape, params, block.wv)?;
            let q = tape.matmul(normed, wq)?;
            let k = tape.matmul(normed, wk)?;
            let v = tape.matmul(normed, wv)?;
            let attn = tape.attention(q, k, v, self.config.heads, &batch.pads)?;
            let wo = binding.bind(tape, params, block.wo)?;
            let attn = tape.matmul(attn, wo)?;
            let attn = tape.dropout(attn, dropout, dropout_rng)?;
            x = tape.add(x, attn)?;

            let g2 = binding.bind(tape, params, block.ffn_ln.0)?;
            let b2n = binding.bind(tape, params, block.ffn_ln.1)?;
            let normed2 = tape.layer_norm(x, g2, b2n)?;
            let w1 = binding.bind(tape, params, block.w1)?;
            let b1 = binding.bind(tape, params, block.b1)?;
            let w2 = binding.bind(tape, params, block.w2)?;
            let b2 = binding.bind(tape, params, block.b2)?;
            let h = tape.matmul(normed2, w1)?;
            let h = tape.add_bias(h, b1)?;
            let h = tape.relu(h)?;
            let h = tape.matmul(h, w2)?;
            let h = tape.add_bias(h, b2)?;
            let h = tape.dropout(h, dropout, dropout_rng)?;
            x = tape.add(x, h)?;
        }
        let g = binding.bind(tape, params, self.ids.final_ln.0)?;
        let b = binding.bind(tape, params, self.ids.final_ln.1)?;
        tape.layer_norm(x, g, b)
    }

    /// Joint purchase/bid next-item loss over a training batch.
    ///
    /// `loss = L_purchase + bid_loss_weight * L_bid`, where each term is the
    /// mean over its target positions of binary cross-entropy of the positive
    /// score against the sampled negatives.
    pub fn training_loss(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        binding: &mut TapeBinding,
        batch: &TrainBatch<T>,
        dropout: f64,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let hidden = self.encode(params, tape, binding, &batch.seq, dropout, dropout_rng)?;
        let wf = binding.bind(tape, params, self.ids.feature_proj)?;

        let n_purchase = batch
            .target_relation
            .iter()
            .filter(|r| **r == Some(Relation::Purchase))
            .count();
        let n_bid = batch
            .target_relation
            .iter()
            .filter(|r| **r == Some(Relation::Bid))
            .count();
        let lambda = self.config.bid_loss_weight;
        let weights: Vec<T> = batch
            .target_relation
            .iter()
            .map(|r| match r {
                Some(Relation::Purchase) => T::from_f64(1.0 / n_purchase.max(1) as f64),
                Some(Relation::Bid) => T::from_f64(lambda / n_bid.max(1) as f64),
                None => T::ZERO,
            })
            .collect();
        let rows = batch.target_relation.len();

        let pos_feats = tape.constant(batch.pos_features.clone())?;
        let pos_proj = tape.matmul(pos_feats, wf)?;
        let pos_scores = tape.row_dot(hidden, pos_proj)?;
        let mut loss =
            tape.logistic_loss(pos_scores, vec![1i8; rows], weights.clone())?;
        for neg in &batch.neg_features {
            let neg_feats = tape.constant(neg.clone())?;
            let neg_proj = tape.matmul(neg_feats, wf)?;
            let neg_scores = tape.row_dot(hidden, neg_proj)?;
            let neg_loss = tape.logistic_loss(neg_scores, vec![-1i8; rows], weights.clone())?;
            loss = tape.add(loss, neg_loss)?;
        }
        Ok(loss)
    }

    /// Encode one history and return the hidden state at the last real
    /// position. An empty history falls back to the zero vector, which makes
    /// downstream scores zero and leaves ranking to the id tie-break.
    pub fn encode_history(&self, history: &[HistEntry<'_>]) -> Result<Vec<T>> {
        let d = self.config.embed_dim;
        if history.is_empty() {
            return Ok(vec![T::ZERO; d]);
        }
        let batch = self.build_seq_batch(&[history.to_vec()])?;
        let mut tape = Tape::new();
        let mut binding = TapeBinding::new();
        let mut rng = stream(0, Stream::Dropout, 0); // unused at p = 0
        let hidden = self.encode(&self.params, &mut tape, &mut binding, &batch, 0.0, &mut rng)?;
        let n = self.config.max_seq_len;
        let row = &tape.value(hidden).data()[(n - 1) * d..n * d];
        Ok(row.to_vec())
    }

    /// Dot-product scores of candidates against an encoded query.
    pub fn score_candidates(&self, query: &[T], candidates: &[&[f32]]) -> Result<Vec<f32>> {
        if query.len() != self.config.embed_dim {
            return Err(Error::Shape {
                op: "score_candidates",
                detail: format!(
                    "query length {} vs embed_dim {}",
                    query.len(),
                    self.config.embed_dim
                ),
            });
        }
        let f = self.feature_dim;
        let mut data = Vec::with_capacity(candidates.len() * f);
        for c in candidates {
            if c.len() != f {
                return Err(Error::Shape {
                    op: "score_candidates",
                    detail: format!("candidate has {} features, expected {f}", c.len()),
                });
            }
            data.extend(c.iter().map(|&v| T::from_f64(v as f64)));
        }
        let mut tape = Tape::new();
        let feats = tape.constant(Tensor::new(vec![candidates.len(), f], data)?)?;
        let wf = tape.constant(self.params.value(self.ids.feature_proj).clone())?;
        let proj = tape.matmul(feats, wf)?;
        let q = tape.constant(Tensor::new(vec![1, query.len()], query.to_vec())?)?;
        let scores = tape.matmul_nt(proj, q)?;
        Ok(tape.value(scores).data().iter().map(|v| v.to_f64() as f32).collect())
    }

    /// Top-K vehicle ids by score, ties broken by ascending id.
    pub fn recommend(
        &self,
        history: &[HistEntry<'_>],
        candidates: &[(u32, &[f32])],
        k: usize,
    ) -> Result<Vec<(u32, f32)>> {
        if k > candidates.len() {
            return Err(Error::Argument(format!(
                "k={k} exceeds candidate count {}",
                candidates.len()
            )));
        }
        let query = self.encode_history(history)?;
        let feats: Vec<&[f32]> = candidates.iter().map(|(_, f)| *f).collect();
        let scores = self.score_candidates(&query, &feats)?;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .expect("finite scores")
                .then_with(|| candidates[a].0.cmp(&candidates[b].0))
        });
        Ok(order.into_iter().take(k).map(|i| (candidates[i].0, scores[i])).collect())
    }
}

impl SasrecModel<f32> {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = Meta { config: self.config.clone(), feature_dim: self.feature_dim };
        let json = serde_json::to_string(&meta)
            .map_err(|e| Error::Checkpoint(format!("serializing hyperparams: {e}")))?;
        crate::checkpoint::save(path, MODEL_KIND, &json, &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = crate::checkpoint::load_expecting(path, MODEL_KIND)?;
        let meta: Meta = serde_json::from_str(&ckpt.hyperparams_json)
            .map_err(|e| Error::Checkpoint(format!("bad hyperparams payload: {e}")))?;
        Self::from_parts(meta.config, meta.feature_dim, ckpt.params)
    }
}

/// Evaluation adapter: encodes the case history and scores the candidate
/// pool with the model.
pub struct SasrecScorer<'a> {
    pub model: &'a SasrecModel<f32>,
}

impl SasrecScorer<'_> {
    fn history_entries<'d>(&self, ds: &'d Dataset, case: &EvalCase<'d>) -> Vec<HistEntry<'d>> {
        case.history
            .iter()
            .filter(|it| self.model.config.include_bids || it.relation == Relation::Purchase)
            .map(|it| HistEntry {
                features: &ds.vehicles[ds.vehicle_pos(it.vehicle_id).expect("validated")].features,
                relation: it.relation,
            })
            .collect()
    }
}

impl AuctionScorer for SasrecScorer<'_> {
    fn name(&self) -> &str {
        MODEL_KIND
    }

    fn score_case(&self, ds: &Dataset, case: &EvalCase<'_>) -> Result<Vec<f32>> {
        let history = self.history_entries(ds, case);
        let query = self.model.encode_history(&history)?;
        let feats: Vec<&[f32]> = case
            .candidates
            .iter()
            .map(|&v| ds.vehicles[v].features.as_slice())
            .collect();
        self.model.score_candidates(&query, &feats)
    }
}
