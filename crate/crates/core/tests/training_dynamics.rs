//! Learning-signal checks on synthetic auction data: training beats the
//! untrained model, and the trained ranker recovers planted affinities.

use carrec_core::data::{generate_with_trace, leave_one_out_split, SyntheticConfig};
use carrec_core::eval::{evaluate, EvalProtocol};
use carrec_core::sasrec::{train, HistEntry, SasrecConfig, SasrecModel, SasrecScorer};

use rand::Rng;

fn small_data_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_dealers: 120,
        n_vehicles: 3000,
        latent_dim: 4,
        dealer_feature_dim: 8,
        vehicle_feature_dim: 10,
        bids_per_purchase_mean: 2.0,
        noise_scale: 0.05,
        seed,
    }
}

fn small_model_config(seed: u64) -> SasrecConfig {
    SasrecConfig {
        embed_dim: 32,
        blocks: 1,
        heads: 2,
        max_seq_len: 30,
        dropout: 0.1,
        learning_rate: 3e-3,
        epochs: 30,
        batch_size: 32,
        seed,
        ..Default::default()
    }
}

#[test]
fn validation_hr_strictly_improves_over_untrained_model() {
    for seed in [1u64, 2, 3] {
        let ds = carrec_core::data::generate(&small_data_config(100 + seed)).unwrap();
        let split = leave_one_out_split(&ds);
        let config = small_model_config(seed);
        let protocol = EvalProtocol { k: vec![20], negatives: 103, seed };

        let untrained = SasrecModel::<f32>::new(config.clone(), ds.vehicle_feature_dim()).unwrap();
        let base = evaluate(&SasrecScorer { model: &untrained }, &ds, &split.val, &protocol)
            .unwrap()
            .metrics["hr@20"];

        let out = train(&ds, &split, &config).unwrap();
        let trained = evaluate(&SasrecScorer { model: &out.model }, &ds, &split.val, &protocol)
            .unwrap()
            .metrics["hr@20"];
        assert!(
            trained > base,
            "seed {seed}: trained hr@20 {trained} did not beat untrained {base}"
        );
    }
}

#[test]
fn trained_model_ranks_planted_affinity_item_above_median() {
    let (ds, trace) = generate_with_trace(&SyntheticConfig {
        noise_scale: 0.0,
        ..small_data_config(55)
    })
    .unwrap();
    let split = leave_one_out_split(&ds);
    let config = small_model_config(9);
    let out = train(&ds, &split, &config).unwrap();

    let mut rng = carrec_core::nn::rng::stream(13, carrec_core::nn::rng::Stream::EvalCase, 777);
    let mut above_median = 0usize;
    let mut total = 0usize;
    for case in &split.test {
        let positive = &ds.interactions[case.interaction];
        // 50 random candidates the dealer never interacted with.
        let interacted: std::collections::HashSet<u32> = ds
            .dealer_history(case.dealer_pos)
            .iter()
            .map(|&i| ds.interactions[i].vehicle_id)
            .collect();
        let mut pool = Vec::new();
        while pool.len() < 50 {
            let v = rng.random_range(0..ds.n_vehicles());
            let id = ds.vehicles[v].vehicle_id;
            if !interacted.contains(&id) && !pool.contains(&v) {
                pool.push(v);
            }
        }
        // The planted best candidate by true latent affinity.
        let best = *pool
            .iter()
            .max_by(|&&a, &&b| {
                trace
                    .affinity(case.dealer_pos, a)
                    .total_cmp(&trace.affinity(case.dealer_pos, b))
            })
            .unwrap();

        let history: Vec<HistEntry<'_>> = ds
            .dealer_history(case.dealer_pos)
            .iter()
            .map(|&i| &ds.interactions[i])
            .filter(|it| it.timestamp < positive.timestamp)
            .map(|it| HistEntry {
                features: &ds.vehicles[ds.vehicle_pos(it.vehicle_id).unwrap()].features,
                relation: it.relation,
            })
            .collect();
        let query = out.model.encode_history(&history).unwrap();
        let feats: Vec<&[f32]> = pool.iter().map(|&v| ds.vehicles[v].features.as_slice()).collect();
        let scores = out.model.score_candidates(&query, &feats).unwrap();

        let best_pos = pool.iter().position(|&v| v == best).unwrap();
        let rank = 1 + scores
            .iter()
            .enumerate()
            .filter(|&(i, &s)| {
                s > scores[best_pos]
                    || (s == scores[best_pos]
                        && ds.vehicles[pool[i]].vehicle_id < ds.vehicles[pool[best_pos]].vehicle_id)
            })
            .count();
        if rank <= 25 {
            above_median += 1;
        }
        total += 1;
    }
    let frac = above_median as f64 / total as f64;
    assert!(
        frac >= 0.70,
        "planted-affinity item above median in only {:.1}% of {total} cases",
        100.0 * frac
    );
}
