//! Chronological leave-one-out split over purchases.

use super::{Dataset, Relation};

/// One held-out purchase: the dealer plus the interaction index of the
/// positive.
#[derive(Clone, Copy, Debug)]
pub struct EvalCaseRef {
    pub dealer_pos: usize,
    pub interaction: usize,
}

/// Interaction indices per role. Purchases are partitioned across
/// train/val/test; bids stay in train as history but never as targets, and a
/// dealer's bids at or after their held-out test purchase are dropped
/// entirely.
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<EvalCaseRef>,
    pub test: Vec<EvalCaseRef>,
}

impl Split {
    pub fn train_interactions<'a>(&'a self, ds: &'a Dataset) -> impl Iterator<Item = &'a super::Interaction> + 'a {
        self.train.iter().map(move |&i| &ds.interactions[i])
    }
}

/// Per dealer with at least three purchases: last purchase to test, second to
/// last to validation, the rest to train. Dealers with fewer purchases
/// contribute everything to train and are absent from evaluation.
pub fn leave_one_out_split(ds: &Dataset) -> Split {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();

    for dealer_pos in 0..ds.n_dealers() {
        let history = ds.dealer_history(dealer_pos);
        let purchases: Vec<usize> = history
            .iter()
            .copied()
            .filter(|&i| ds.interactions[i].relation == Relation::Purchase)
            .collect();
        if purchases.len() < 3 {
            train.extend_from_slice(history);
            continue;
        }
        let test_idx = purchases[purchases.len() - 1];
        let val_idx = purchases[purchases.len() - 2];
        let test_ts = ds.interactions[test_idx].timestamp;
        for &i in history {
            if i == test_idx || i == val_idx {
                continue;
            }
            let it = &ds.interactions[i];
            match it.relation {
                Relation::Purchase => train.push(i),
                // Bids stay usable as history only while they precede the
                // held-out purchase.
                Relation::Bid => {
                    if it.timestamp < test_ts {
                        train.push(i);
                    }
                }
            }
        }
        val.push(EvalCaseRef { dealer_pos, interaction: val_idx });
        test.push(EvalCaseRef { dealer_pos, interaction: test_idx });
    }

    Split { train, val, test }
}

#[cfg(test)]
mod tests {
    use super::super::{DealerRecord, Interaction, VehicleRecord};
    use super::*;

    fn toy(interactions: Vec<Interaction>) -> Dataset {
        let max_v = interactions.iter().map(|i| i.vehicle_id).max().unwrap_or(0);
        let max_d = interactions.iter().map(|i| i.dealer_id).max().unwrap_or(0);
        Dataset::new(
            (0..=max_d)
                .map(|id| DealerRecord { dealer_id: id, features: vec![0.0] })
                .collect(),
            (0..=max_v)
                .map(|id| VehicleRecord { vehicle_id: id, features: vec![0.0] })
                .collect(),
            interactions,
        )
        .unwrap()
    }

    fn purchase(d: u32, v: u32, t: i64) -> Interaction {
        Interaction { dealer_id: d, vehicle_id: v, timestamp: t, relation: Relation::Purchase }
    }

    fn bid(d: u32, v: u32, t: i64) -> Interaction {
        Interaction { dealer_id: d, vehicle_id: v, timestamp: t, relation: Relation::Bid }
    }

    #[test]
    fn three_purchases_split_one_each() {
        let ds = toy(vec![purchase(0, 1, 1), purchase(0, 2, 2), purchase(0, 3, 3)]);
        let split = leave_one_out_split(&ds);
        assert_eq!(split.train.len(), 1);
        assert_eq!(ds.interactions[split.train[0]].timestamp, 1);
        assert_eq!(ds.interactions[split.val[0].interaction].timestamp, 2);
        assert_eq!(ds.interactions[split.test[0].interaction].timestamp, 3);
    }

    #[test]
    fn two_purchases_stay_in_train() {
        let ds = toy(vec![purchase(0, 1, 1), purchase(0, 2, 2)]);
        let split = leave_one_out_split(&ds);
        assert_eq!(split.train.len(), 2);
        assert!(split.val.is_empty());
        assert!(split.test.is_empty());
    }

    #[test]
    fn bids_before_test_remain_bids_after_are_dropped() {
        let ds = toy(vec![
            purchase(0, 1, 1),
            bid(0, 4, 2),
            purchase(0, 2, 3),
            purchase(0, 3, 5),
            bid(0, 5, 5),
            bid(0, 6, 7),
        ]);
        let split = leave_one_out_split(&ds);
        let train_vehicles: Vec<u32> =
            split.train.iter().map(|&i| ds.interactions[i].vehicle_id).collect();
        // Purchase at t=1 plus the bid at t=2; bids at t=5 (tie with the test
        // purchase) and t=7 are gone.
        assert_eq!(train_vehicles, vec![1, 4]);
    }

    #[test]
    fn purchase_partition_is_exact() {
        let ds = toy(vec![
            purchase(0, 1, 1),
            purchase(0, 2, 2),
            purchase(0, 3, 3),
            purchase(0, 4, 4),
            purchase(1, 5, 1),
            purchase(1, 6, 2),
            bid(1, 7, 1),
        ]);
        let split = leave_one_out_split(&ds);
        let mut seen: Vec<usize> = split
            .train
            .iter()
            .copied()
            .filter(|&i| ds.interactions[i].relation == Relation::Purchase)
            .chain(split.val.iter().map(|c| c.interaction))
            .chain(split.test.iter().map(|c| c.interaction))
            .collect();
        seen.sort_unstable();
        let mut all_purchases: Vec<usize> = (0..ds.interactions.len())
            .filter(|&i| ds.interactions[i].relation == Relation::Purchase)
            .collect();
        all_purchases.sort_unstable();
        assert_eq!(seen, all_purchases);
    }
}
