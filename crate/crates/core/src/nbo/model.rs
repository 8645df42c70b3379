//! Deep embedding network: dedicated embedding tables per categorical
//! variable, a fully-connected encoder over the numerical block, then a
//! contraction stack down to the class head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng::{stream, Stream};
use crate::nn::{init, NodeId, ParamId, ParamSet, Scalar, Tape, TapeBinding, Tensor};

use super::{ContractRecord, ContractSchema, ContractSet, Encoders, NboConfig};

pub const NBO_KIND: &str = "nbo";

#[derive(Serialize, Deserialize)]
struct Meta {
    config: NboConfig,
    schema: ContractSchema,
    encoders: Encoders,
}

struct Ids {
    cat_emb: Vec<ParamId>,
    prev_emb: ParamId,
    num_layers: Vec<(ParamId, ParamId)>,
    contraction: Vec<(ParamId, ParamId)>,
    head: (ParamId, ParamId),
}

/// Index-encoded minibatch ready for the forward pass.
pub struct EncodedBatch<T> {
    pub cat_indices: Vec<Vec<u32>>,
    pub prev_indices: Vec<u32>,
    /// `[rows, n_num]`, standardized; `None` when the schema has no
    /// numerical columns.
    pub numericals: Option<Tensor<T>>,
    pub targets: Vec<u32>,
    pub rows: usize,
}

pub struct NboModel<T: Scalar> {
    pub config: NboConfig,
    pub schema: ContractSchema,
    pub encoders: Encoders,
    pub params: ParamSet<T>,
    n_num: usize,
    ids: Ids,
}

impl<T: Scalar> NboModel<T> {
    pub fn new(config: NboConfig, schema: ContractSchema, encoders: Encoders) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let c = schema.n_classes;
        let n_cat = schema.categorical_names().len();
        let n_num = schema.numerical_names().len();
        if encoders.vocabs.len() != n_cat {
            return Err(Error::Config(format!(
                "{} vocabularies for {n_cat} categorical columns",
                encoders.vocabs.len()
            )));
        }

        let cat_dims: Vec<usize> = match &config.embedding_dims {
            Some(dims) => {
                if dims.len() != n_cat {
                    return Err(Error::Config(format!(
                        "{} embedding dims for {n_cat} categorical columns",
                        dims.len()
                    )));
                }
                dims.clone()
            }
            None => encoders
                .vocabs
                .iter()
                .map(|v| NboConfig::embedding_dim_for(v.cardinality()))
                .collect(),
        };
        let prev_dim = config
            .prev_class_embedding_dim
            .unwrap_or_else(|| NboConfig::embedding_dim_for(c));

        let mut params = ParamSet::new();
        let mut draw = 0u64;
        let mut next_rng = || {
            let r = stream(config.seed, Stream::Init, 0x4e00 + draw);
            draw += 1;
            r
        };

        let mut cat_emb = Vec::with_capacity(n_cat);
        for (i, (vocab, &dim)) in encoders.vocabs.iter().zip(&cat_dims).enumerate() {
            cat_emb.push(params.add(
                format!("cat{i}.emb"),
                init::normal(&mut next_rng(), vec![vocab.cardinality(), dim], 0.02),
            )?);
        }
        let prev_emb =
            params.add("prev.emb", init::normal(&mut next_rng(), vec![c, prev_dim], 0.02))?;

        let mut num_layers = Vec::new();
        let mut num_out = 0usize;
        if n_num > 0 {
            let mut w = n_num;
            for (j, &width) in config.numerical_encoder_widths.iter().enumerate() {
                num_layers.push((
                    params.add(format!("num.w{j}"), init::xavier_uniform(&mut next_rng(), w, width))?,
                    params.add(format!("num.b{j}"), init::zeros_vec(width))?,
                ));
                w = width;
            }
            num_out = w;
        }

        let concat_width: usize = cat_dims.iter().sum::<usize>() + prev_dim + num_out;
        let widths = match &config.contraction_widths {
            Some(w) => w.clone(),
            None => NboConfig::contraction_rule(concat_width),
        };
        let mut contraction = Vec::new();
        let mut w = concat_width;
        for (j, &width) in widths.iter().enumerate() {
            if width == 0 {
                return Err(Error::Config("contraction widths must be positive".into()));
            }
            contraction.push((
                params.add(format!("contract{j}.w"), init::xavier_uniform(&mut next_rng(), w, width))?,
                params.add(format!("contract{j}.b"), init::zeros_vec(width))?,
            ));
            w = width;
        }
        let head = (
            params.add("head.w", init::xavier_uniform(&mut next_rng(), w, c))?,
            params.add("head.b", init::zeros_vec(c))?,
        );

        Ok(Self {
            config,
            schema,
            encoders,
            params,
            n_num,
            ids: Ids { cat_emb, prev_emb, num_layers, contraction, head },
        })
    }

    pub(crate) fn from_parts(
        config: NboConfig,
        schema: ContractSchema,
        encoders: Encoders,
        params: ParamSet<T>,
    ) -> Result<Self> {
        let template = Self::new(config.clone(), schema.clone(), encoders.clone())?;
        if params.len() != template.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: {} vs {}",
                params.len(),
                template.params.len()
            )));
        }
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
        let lookup = |name: &str| params.lookup(name).unwrap();
        let n_cat = template.ids.cat_emb.len();
        let ids = Ids {
            cat_emb: (0..n_cat).map(|i| lookup(&format!("cat{i}.emb"))).collect(),
            prev_emb: lookup("prev.emb"),
            num_layers: (0..template.ids.num_layers.len())
                .map(|j| (lookup(&format!("num.w{j}")), lookup(&format!("num.b{j}"))))
                .collect(),
            contraction: (0..template.ids.contraction.len())
                .map(|j| (lookup(&format!("contract{j}.w")), lookup(&format!("contract{j}.b"))))
                .collect(),
            head: (lookup("head.w"), lookup("head.b")),
        };
        Ok(Self { config, schema, encoders, params, n_num: template.n_num, ids })
    }

    /// Encode raw records against the frozen vocabularies and statistics.
    pub fn encode_records(&self, records: &[&ContractRecord]) -> Result<EncodedBatch<T>> {
        let rows = records.len();
        if rows == 0 {
            return Err(Error::Argument("empty record batch".into()));
        }
        let n_cat = self.encoders.vocabs.len();
        let mut cat_indices = vec![Vec::with_capacity(rows); n_cat];
        let mut prev_indices = Vec::with_capacity(rows);
        let mut numericals = Vec::with_capacity(rows * self.n_num);
        let mut targets = Vec::with_capacity(rows);
        for r in records {
            for (c, vocab) in self.encoders.vocabs.iter().enumerate() {
                cat_indices[c].push(vocab.lookup(&r.categoricals[c]));
            }
            prev_indices.push(r.previous_class);
            if self.n_num > 0 {
                numericals.extend(
                    self.encoders
                        .standardizer
                        .apply(&r.numericals)
                        .into_iter()
                        .map(|v| T::from_f64(v as f64)),
                );
            }
            targets.push(r.target_class);
        }
        let numericals = if self.n_num > 0 {
            Some(Tensor::new(vec![rows, self.n_num], numericals)?)
        } else {
            None
        };
        Ok(EncodedBatch { cat_indices, prev_indices, numericals, targets, rows })
    }

    /// Class logits `[rows, C]`.
    pub fn logits(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        binding: &mut TapeBinding,
        batch: &EncodedBatch<T>,
    ) -> Result<NodeId> {
        let mut parts = Vec::new();
        for (i, idx) in batch.cat_indices.iter().enumerate() {
            let table = binding.bind(tape, params, self.ids.cat_emb[i])?;
            parts.push(tape.gather(table, idx.clone())?);
        }
        let prev_table = binding.bind(tape, params, self.ids.prev_emb)?;
        parts.push(tape.gather(prev_table, batch.prev_indices.clone())?);
        if let Some(nums) = &batch.numericals {
            let mut x = tape.constant(nums.clone())?;
            for &(w, b) in &self.ids.num_layers {
                let wn = binding.bind(tape, params, w)?;
                let bn = binding.bind(tape, params, b)?;
                x = tape.matmul(x, wn)?;
                x = tape.add_bias(x, bn)?;
                x = tape.relu(x)?;
            }
            parts.push(x);
        }
        let mut x = tape.concat(&parts)?;
        for &(w, b) in &self.ids.contraction {
            let wn = binding.bind(tape, params, w)?;
            let bn = binding.bind(tape, params, b)?;
            x = tape.matmul(x, wn)?;
            x = tape.add_bias(x, bn)?;
            x = tape.relu(x)?;
        }
        let hw = binding.bind(tape, params, self.ids.head.0)?;
        let hb = binding.bind(tape, params, self.ids.head.1)?;
        let x = tape.matmul(x, hw)?;
        tape.add_bias(x, hb)
    }

    /// Mean cross-entropy over the batch targets.
    pub fn training_loss(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        binding: &mut TapeBinding,
        batch: &EncodedBatch<T>,
    ) -> Result<NodeId> {
        let logits = self.logits(params, tape, binding, batch)?;
        tape.softmax_xent(logits, batch.targets.clone())
    }

    /// Softmax class probabilities per record, `[rows, C]` row-major.
    pub fn forward(&self, records: &[&ContractRecord]) -> Result<Vec<Vec<f32>>> {
        let batch = self.encode_records(records)?;
        let mut tape = Tape::new();
        let mut binding = TapeBinding::new();
        let logits = self.logits(&self.params, &mut tape, &mut binding, &batch)?;
        let probs = tape.softmax(logits)?;
        let c = self.schema.n_classes;
        Ok(tape
            .value(probs)
            .data()
            .chunks(c)
            .map(|row| row.iter().map(|v| v.to_f64() as f32).collect())
            .collect())
    }
}

impl NboModel<f32> {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = Meta {
            config: self.config.clone(),
            schema: self.schema.clone(),
            encoders: self.encoders.clone(),
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| Error::Checkpoint(format!("serializing hyperparams: {e}")))?;
        crate::checkpoint::save(path, NBO_KIND, &json, &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = crate::checkpoint::load_expecting(path, NBO_KIND)?;
        let mut meta: Meta = serde_json::from_str(&ckpt.hyperparams_json)
            .map_err(|e| Error::Checkpoint(format!("bad hyperparams payload: {e}")))?;
        meta.encoders.after_load();
        Self::from_parts(meta.config, meta.schema, meta.encoders, ckpt.params)
    }
}

/// Class scorer backed by the trained network.
pub struct NboNetScorer<'a> {
    pub model: &'a NboModel<f32>,
}

impl super::eval::ClassScorer for NboNetScorer<'_> {
    fn name(&self) -> &str {
        NBO_KIND
    }

    fn class_scores(&self, _set: &ContractSet, record: &ContractRecord, _case_seed: u64) -> Result<Vec<f32>> {
        Ok(self.model.forward(&[record])?.remove(0))
    }
}
