//! Property tests for the numeric and protocol invariants.

use proptest::prelude::*;

use carrec_core::data::{generate, leave_one_out_split, Relation, SyntheticConfig};
use carrec_core::eval::rank_of_positive;
use carrec_core::nn::{ParamSet, Tape, Tensor};

proptest! {
    // Softmax rows sum to 1 within 1e-6 for inputs with magnitude up to 1e4.
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..8,
                               raw in prop::collection::vec(-1e4f32..1e4, 1..40)) {
        let numel = rows * cols;
        prop_assume!(raw.len() >= numel);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![rows, cols], raw[..numel].to_vec()).unwrap()).unwrap();
        let y = tape.softmax(x).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            let sum: f32 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    // rank_of_positive agrees with a full-sort oracle under heavy ties.
    #[test]
    fn rank_matches_full_sort(scores in prop::collection::vec(0u8..4, 2..40), positive_seed in 0usize..1000) {
        let n = scores.len();
        let positive = positive_seed % n;
        let scores: Vec<f32> = scores.into_iter().map(|q| q as f32 * 0.25).collect();
        let ids: Vec<u32> = (0..n as u32).rev().collect();
        let got = rank_of_positive(&scores, positive, &ids).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap().then_with(|| ids[a].cmp(&ids[b]))
        });
        let want = order.iter().position(|&i| i == positive).unwrap() + 1;
        prop_assert_eq!(got, want);
    }

    // Checkpoint round-trips are bit-exact for arbitrary finite tensors.
    #[test]
    fn checkpoint_roundtrip_is_bit_exact(data in prop::collection::vec(-1e30f32..1e30, 1..64)) {
        let mut params = ParamSet::new();
        let len = data.len();
        params.add("t", Tensor::new(vec![len], data).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        carrec_core::checkpoint::save(&path, "sasrec-auc", "{}", &params).unwrap();
        let loaded = carrec_core::checkpoint::load(&path).unwrap();
        let a: Vec<u32> = params.value(params.lookup("t").unwrap()).data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = loaded.params.value(loaded.params.lookup("t").unwrap()).data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }

    // The leave-one-out split partitions purchases exactly and never leaks
    // future interactions into evaluation histories.
    #[test]
    fn split_partitions_purchases(seed in 0u64..50) {
        let ds = generate(&SyntheticConfig {
            n_dealers: 15,
            n_vehicles: 150,
            latent_dim: 2,
            dealer_feature_dim: 3,
            vehicle_feature_dim: 3,
            bids_per_purchase_mean: 1.0,
            noise_scale: 0.1,
            seed,
        }).unwrap();
        let split = leave_one_out_split(&ds);

        let mut claimed: Vec<usize> = split
            .train
            .iter()
            .copied()
            .filter(|&i| ds.interactions[i].relation == Relation::Purchase)
            .chain(split.val.iter().map(|c| c.interaction))
            .chain(split.test.iter().map(|c| c.interaction))
            .collect();
        claimed.sort_unstable();
        claimed.dedup();
        let all: Vec<usize> = (0..ds.interactions.len())
            .filter(|&i| ds.interactions[i].relation == Relation::Purchase)
            .collect();
        prop_assert_eq!(claimed.len(), all.len());
        prop_assert_eq!(claimed, all);

        // Test count is exactly the number of dealers with >= 3 purchases.
        let eligible = (0..ds.n_dealers())
            .filter(|&dp| {
                ds.dealer_history(dp)
                    .iter()
                    .filter(|&&i| ds.interactions[i].relation == Relation::Purchase)
                    .count()
                    >= 3
            })
            .count();
        prop_assert_eq!(split.test.len(), eligible);

        // No leakage: every train interaction of an eligible dealer precedes
        // that dealer's held-out purchase.
        for case in &split.test {
            let test_ts = ds.interactions[case.interaction].timestamp;
            for &i in &split.train {
                let it = &ds.interactions[i];
                if ds.dealer_pos(it.dealer_id).unwrap() == case.dealer_pos {
                    prop_assert!(it.timestamp <= test_ts);
                    if it.relation == Relation::Bid {
                        prop_assert!(it.timestamp < test_ts);
                    }
                }
            }
        }
    }
}
