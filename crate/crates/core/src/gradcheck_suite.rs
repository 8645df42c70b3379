//! Named gradient-check cases covering every differentiable op and both
//! full-model losses. All cases run in f64 with dropout masks held fixed.

use rand::Rng;

use crate::data::Relation;
use crate::error::Result;
use crate::nbo;
use crate::nn::rng::{stream, Stream};
use crate::nn::{
    grad_check, init, ParamSet, Tape, TapeBinding, Tensor, GRAD_CHECK_EPSILON, GRAD_CHECK_TOL,
};

/// One suite entry: a layer or loss with its measured max relative error.
pub struct SuiteCase {
    pub name: &'static str,
    pub run: Box<dyn Fn() -> Result<f64> + Send + Sync>,
}

pub struct SuiteResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// Run every case; `tol` is normally [`GRAD_CHECK_TOL`].
pub fn run_suite(cases: &[SuiteCase], tol: f64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let err = (case.run)()?;
        out.push(SuiteResult { name: case.name, max_rel_err: err, pass: err < tol });
    }
    Ok(out)
}

fn rand_params(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamSet<f64> {
    let mut params = ParamSet::new();
    let mut rng = stream(seed, Stream::Init, 0x9c);
    for (name, shape) in shapes {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
        params.add(*name, Tensor::new(shape.clone(), data).unwrap()).unwrap();
    }
    params
}

fn rand_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Stream::Init, 0x9d);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Scalarize an op output so the whole Jacobian is exercised.
fn check<F>(shapes: &[(&str, Vec<usize>)], seed: u64, build: F) -> Result<f64>
where
    F: Fn(&ParamSet<f64>, &mut Tape<f64>, &mut TapeBinding) -> Result<crate::nn::NodeId>,
{
    let mut params = rand_params(shapes, seed);
    grad_check(
        &mut params,
        &|ps: &ParamSet<f64>, tape: &mut Tape<f64>| {
            let mut binding = TapeBinding::new();
            let out = build(ps, tape, &mut binding)?;
            let n = tape.value(out).numel();
            let loss = tape.weighted_sum(out, rand_weights(n, seed))?;
            Ok((loss, binding.bound().to_vec()))
        },
        GRAD_CHECK_EPSILON,
        24,
        seed,
    )
}

fn bind<'a>(
    ps: &ParamSet<f64>,
    tape: &mut Tape<f64>,
    binding: &mut TapeBinding,
    name: &'a str,
) -> Result<crate::nn::NodeId> {
    binding.bind(tape, ps, ps.lookup(name).expect("case parameter"))
}

/// The standard layer-by-layer suite plus both full-model losses.
pub fn standard_suite() -> Vec<SuiteCase> {
    let mut cases: Vec<SuiteCase> = Vec::new();

    cases.push(SuiteCase {
        name: "matmul",
        run: Box::new(|| {
            check(&[("a", vec![3, 4]), ("b", vec![4, 2])], 1, |ps, tape, bd| {
                let a = bind(ps, tape, bd, "a")?;
                let b = bind(ps, tape, bd, "b")?;
                tape.matmul(a, b)
            })
        }),
    });
    cases.push(SuiteCase {
        name: "matmul_nt",
        run: Box::new(|| {
            check(&[("a", vec![3, 4]), ("b", vec![5, 4])], 2, |ps, tape, bd| {
                let a = bind(ps, tape, bd, "a")?;
                let b = bind(ps, tape, bd, "b")?;
                tape.matmul_nt(a, b)
            })
        }),
    });
    cases.push(SuiteCase {
        name: "add_bias",
        run: Box::new(|| {
            check(&[("x", vec![4, 3]), ("b", vec![3])], 3, |ps, tape, bd| {
                let x = bind(ps, tape, bd, "x")?;
                let b = bind(ps, tape, bd, "b")?;
                tape.add_bias(x, b)
            })
        }),
    });
    cases.push(SuiteCase {
        name: "relu",
        run: Box::new(|| {
            // Keep values away from the kink; finite differences straddle it.
            check(&[("x", vec![5, 3])], 4, |ps, tape, bd| {
                let x = bind(ps, tape, bd, "x")?;
                let shifted = tape.scale(x, 3.0)?;
                tape.relu(shifted)
            })
        }),
    });
    cases.push(SuiteCase {
        name: "softmax",
        run: Box::new(|| {
            check(&[("x", vec![4, 5])], 5, |ps, tape, bd| {
                let x = bind(ps, tape, bd, "x")?;
                tape.softmax(x)
            })
        }),
    });
    cases.push(SuiteCase {
        name: "layer_norm",
        run: Box::new(|| {
            check(
                &[("x", vec![4, 6]), ("g", vec![6]), ("b", vec![6])],
                6,
                |ps, tape, bd| {
                    let x = bind(ps, tape, bd, "x")?;
                    let g = bind(ps, tape, bd, "g")?;
                    let b = bind(ps, tape, bd, "b")?;
                    tape.layer_norm(x, g, b)
                },
            )
        }),
    });
    cases.push(SuiteCase {
        name: "gather",
        run: Box::new(|| {
            check(&[("table", vec![6, 4])], 7, |ps, tape, bd| {
                let t = bind(ps, tape, bd, "table")?;
                tape.gather(t, vec![0, 3, 3, 5, 1])
            })
        }),
    });
    cases.push(SuiteCase {
        name: "concat",
        run: Box::new(|| {
            check(&[("a", vec![3, 2]), ("b", vec![3, 4])], 8, |ps, tape, bd| {
                let a = bind(ps, tape, bd, "a")?;
                let b = bind(ps, tape, bd, "b")?;
                tape.concat(&[a, b])
            })
        }),
    });
    cases.push(SuiteCase {
        name: "row_dot",
        run: Box::new(|| {
            check(&[("a", vec![4, 5]), ("b", vec![4, 5])], 9, |ps, tape, bd| {
                let a = bind(ps, tape, bd, "a")?;
                let b = bind(ps, tape, bd, "b")?;
                tape.row_dot(a, b)
            })
        }),
    });
    cases.push(SuiteCase {
        name: "dropout",
        run: Box::new(|| {
            check(&[("x", vec![6, 4])], 10, |ps, tape, bd| {
                let x = bind(ps, tape, bd, "x")?;
                // Same stream every call, so the mask is identical across
                // the perturbed evaluations.
                let mut rng = stream(33, Stream::Dropout, 0);
                tape.dropout(x, 0.4, &mut rng)
            })
        }),
    });
    cases.push(SuiteCase {
        name: "attention_single_head",
        run: Box::new(|| {
            check(
                &[("q", vec![5, 4]), ("k", vec![5, 4]), ("v", vec![5, 4])],
                11,
                |ps, tape, bd| {
                    let q = bind(ps, tape, bd, "q")?;
                    let k = bind(ps, tape, bd, "k")?;
                    let v = bind(ps, tape, bd, "v")?;
                    tape.attention(q, k, v, 1, &[0])
                },
            )
        }),
    });
    cases.push(SuiteCase {
        name: "attention_multi_head_padded",
        run: Box::new(|| {
            check(
                &[("q", vec![8, 4]), ("k", vec![8, 4]), ("v", vec![8, 4])],
                12,
                |ps, tape, bd| {
                    let q = bind(ps, tape, bd, "q")?;
                    let k = bind(ps, tape, bd, "k")?;
                    let v = bind(ps, tape, bd, "v")?;
                    // Two sequences of length 4 with different padding.
                    tape.attention(q, k, v, 2, &[1, 2])
                },
            )
        }),
    });
    cases.push(SuiteCase {
        name: "logistic_loss",
        run: Box::new(|| {
            let mut params = rand_params(&[("s", vec![6])], 13);
            grad_check(
                &mut params,
                &|ps: &ParamSet<f64>, tape: &mut Tape<f64>| {
                    let mut bd = TapeBinding::new();
                    let s = bind(ps, tape, &mut bd, "s")?;
                    let loss = tape.logistic_loss(
                        s,
                        vec![1, -1, 1, -1, 1, -1],
                        vec![0.5, 0.25, 1.0, 0.75, 0.1, 0.4],
                    )?;
                    Ok((loss, bd.bound().to_vec()))
                },
                GRAD_CHECK_EPSILON,
                24,
                13,
            )
        }),
    });
    cases.push(SuiteCase {
        name: "softmax_cross_entropy",
        run: Box::new(|| {
            let mut params = rand_params(&[("logits", vec![4, 5])], 14);
            grad_check(
                &mut params,
                &|ps: &ParamSet<f64>, tape: &mut Tape<f64>| {
                    let mut bd = TapeBinding::new();
                    let l = bind(ps, tape, &mut bd, "logits")?;
                    let loss = tape.softmax_xent(l, vec![2, 0, 4, 1])?;
                    Ok((loss, bd.bound().to_vec()))
                },
                GRAD_CHECK_EPSILON,
                24,
                14,
            )
        }),
    });
    cases.push(SuiteCase {
        name: "pointwise_loss",
        run: Box::new(|| {
            let config = crate::baselines::PointwiseConfig {
                hidden1: 6,
                hidden2: 4,
                seed: 15,
                ..Default::default()
            };
            let model = crate::baselines::PointwiseModel::<f64>::new(config, 3, 4)?;
            let mut rng = stream(15, Stream::Init, 1);
            let rows: Vec<f64> = (0..5 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rows = Tensor::new(vec![5, 8], rows)?;
            let signs = vec![1i8, -1, 1, -1, 1];
            let mut params = model.params.cast::<f64>();
            grad_check(
                &mut params,
                &|ps: &ParamSet<f64>, tape: &mut Tape<f64>| {
                    let mut bd = TapeBinding::new();
                    let loss =
                        model.training_loss(ps, tape, &mut bd, rows.clone(), signs.clone())?;
                    Ok((loss, bd.bound().to_vec()))
                },
                GRAD_CHECK_EPSILON,
                8,
                15,
            )
        }),
    });
    cases.push(SuiteCase {
        name: "sasrec_full_loss",
        run: Box::new(|| {
            let config = crate::sasrec::SasrecConfig {
                embed_dim: 8,
                blocks: 2,
                heads: 2,
                max_seq_len: 5,
                dropout: 0.0,
                bid_loss_weight: 0.5,
                seed: 16,
                ..Default::default()
            };
            let model = crate::sasrec::SasrecModel::<f64>::new(config, 4)?;
            let batch = sasrec_toy_batch(&model, 16);
            let mut params = model.params.cast::<f64>();
            grad_check(
                &mut params,
                &|ps: &ParamSet<f64>, tape: &mut Tape<f64>| {
                    let mut bd = TapeBinding::new();
                    let mut rng = stream(0, Stream::Dropout, 0);
                    let loss = model.training_loss(ps, tape, &mut bd, &batch, 0.0, &mut rng)?;
                    Ok((loss, bd.bound().to_vec()))
                },
                GRAD_CHECK_EPSILON,
                6,
                16,
            )
        }),
    });
    cases.push(SuiteCase {
        name: "nbo_full_loss",
        run: Box::new(|| {
            let set = nbo::generate_contracts(&nbo::ContractsSyntheticConfig {
                n_records: 24,
                n_classes: 8,
                n_occupations: 4,
                n_regions: 3,
                rule_classes: 5,
                seed: 17,
                ..Default::default()
            })?;
            let idx: Vec<usize> = (0..set.len()).collect();
            let encoders = nbo::Encoders::fit(&set, &idx);
            let config = nbo::NboConfig {
                numerical_encoder_widths: vec![5],
                seed: 17,
                ..Default::default()
            };
            let model = nbo::NboModel::<f64>::new(config, set.schema.clone(), encoders)?;
            let records: Vec<&nbo::ContractRecord> =
                set.records.iter().take(4).collect();
            let batch = model.encode_records(&records)?;
            let mut params = model.params.cast::<f64>();
            grad_check(
                &mut params,
                &|ps: &ParamSet<f64>, tape: &mut Tape<f64>| {
                    let mut bd = TapeBinding::new();
                    let loss = model.training_loss(ps, tape, &mut bd, &batch)?;
                    Ok((loss, bd.bound().to_vec()))
                },
                GRAD_CHECK_EPSILON,
                6,
                17,
            )
        }),
    });
    cases
}

fn sasrec_toy_batch(
    model: &crate::sasrec::SasrecModel<f64>,
    seed: u64,
) -> crate::sasrec::TrainBatch<f64> {
    let f = model.feature_dim;
    let n = model.config.max_seq_len;
    let mut rng = stream(seed, Stream::Init, 2);
    let feats: Vec<Vec<f32>> = (0..12)
        .map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0f64) as f32).collect())
        .collect();
    let relations = [
        vec![Relation::Purchase, Relation::Bid, Relation::Purchase],
        vec![Relation::Bid, Relation::Purchase],
    ];
    let histories: Vec<Vec<crate::sasrec::HistEntry<'_>>> = relations
        .iter()
        .enumerate()
        .map(|(s, rels)| {
            rels.iter()
                .enumerate()
                .map(|(i, &relation)| crate::sasrec::HistEntry {
                    features: &feats[(s * 3 + i) % feats.len()],
                    relation,
                })
                .collect()
        })
        .collect();
    let seq = model.build_seq_batch(&histories).unwrap();
    let rows = seq.b * n;
    let mut pos = vec![0.0f64; rows * f];
    let mut neg = vec![0.0f64; rows * f];
    let mut target_relation = vec![None; rows];
    for (s, rels) in relations.iter().enumerate() {
        let take = rels.len().min(n);
        let pad = n - take;
        for slot in 0..take {
            let row = s * n + pad + slot;
            target_relation[row] = Some(rels[slot]);
            for c in 0..f {
                pos[row * f + c] = feats[(s + slot + 4) % feats.len()][c] as f64;
                neg[row * f + c] = feats[(s + slot + 8) % feats.len()][c] as f64;
            }
        }
    }
    crate::sasrec::TrainBatch {
        seq,
        pos_features: Tensor::new(vec![rows, f], pos).unwrap(),
        neg_features: vec![Tensor::new(vec![rows, f], neg).unwrap()],
        target_relation,
    }
}

/// Negative-control fixture: reports a zero gradient for a parameter the
/// loss actually depends on, so the checker must flag it.
pub fn broken_case() -> SuiteCase {
    SuiteCase {
        name: "injected-broken-gradient",
        run: Box::new(|| {
            let mut params = rand_params(&[("x", vec![4])], 99);
            grad_check(
                &mut params,
                &|ps: &ParamSet<f64>, tape: &mut Tape<f64>| {
                    // The loss reads x through a constant, while the reported
                    // binding points at an unused leaf: analytic gradient is
                    // zero, numeric is not.
                    let unused = tape.leaf(ps.value(ps.lookup("x").unwrap()).clone())?;
                    let through_constant =
                        tape.constant(ps.value(ps.lookup("x").unwrap()).clone())?;
                    let loss = tape.weighted_sum(through_constant, vec![1.0, 2.0, 3.0, 4.0])?;
                    Ok((loss, vec![(ps.lookup("x").unwrap(), unused)]))
                },
                GRAD_CHECK_EPSILON,
                8,
                99,
            )
        }),
    }
}
