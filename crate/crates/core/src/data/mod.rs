//! Auction interaction data model: dealers, vehicles, timestamped
//! purchase/bid events, chronological per-dealer indexing, splits, and the
//! synthetic generator used in place of production exports.

mod csv_io;
mod split;
mod stats;
mod synthetic;

pub use csv_io::{load_dataset, save_dataset, DEALERS_FILE, INTERACTIONS_FILE, VEHICLES_FILE};
pub use split::{leave_one_out_split, EvalCaseRef, Split};
pub use stats::{densities_from_counts, DatasetStats};
pub use synthetic::{generate, generate_with_trace, SyntheticConfig, SyntheticTrace};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Implicit-feedback relation kinds.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Purchase,
    Bid,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Purchase => "purchase",
            Relation::Bid => "bid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "purchase" => Some(Relation::Purchase),
            "bid" => Some(Relation::Bid),
            _ => None,
        }
    }

    /// Embedding-table row used by models.
    pub fn index(self) -> u32 {
        match self {
            Relation::Purchase => 0,
            Relation::Bid => 1,
        }
    }
}

/// Auction participant with preprocessed numeric attributes.
#[derive(Clone, Debug)]
pub struct DealerRecord {
    pub dealer_id: u32,
    pub features: Vec<f32>,
}

/// Auctioned vehicle with preprocessed configuration attributes.
#[derive(Clone, Debug)]
pub struct VehicleRecord {
    pub vehicle_id: u32,
    pub features: Vec<f32>,
}

/// One implicit-feedback event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub dealer_id: u32,
    pub vehicle_id: u32,
    pub timestamp: i64,
    pub relation: Relation,
}

/// Validated collection of dealers, vehicles and interactions with a derived
/// per-dealer chronological index. Immutable after construction.
#[derive(Debug)]
pub struct Dataset {
    pub dealers: Vec<DealerRecord>,
    pub vehicles: Vec<VehicleRecord>,
    pub interactions: Vec<Interaction>,
    dealer_index: HashMap<u32, usize>,
    vehicle_index: HashMap<u32, usize>,
    /// Interaction indices per dealer (positional), sorted by
    /// `(timestamp, input order)`.
    per_dealer: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        dealers: Vec<DealerRecord>,
        vehicles: Vec<VehicleRecord>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        let mut dealer_index = HashMap::with_capacity(dealers.len());
        let dealer_feat_len = dealers.first().map(|d| d.features.len()).unwrap_or(0);
        for (i, d) in dealers.iter().enumerate() {
            if d.features.len() != dealer_feat_len {
                return Err(Error::Config(format!(
                    "dealer {} has {} features, expected {dealer_feat_len}",
                    d.dealer_id,
                    d.features.len()
                )));
            }
            if d.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: format!("features of dealer {}", d.dealer_id) });
            }
            if dealer_index.insert(d.dealer_id, i).is_some() {
                return Err(Error::Config(format!("duplicate dealer id {}", d.dealer_id)));
            }
        }
        let mut vehicle_index = HashMap::with_capacity(vehicles.len());
        let vehicle_feat_len = vehicles.first().map(|v| v.features.len()).unwrap_or(0);
        for (i, v) in vehicles.iter().enumerate() {
            if v.features.len() != vehicle_feat_len {
                return Err(Error::Config(format!(
                    "vehicle {} has {} features, expected {vehicle_feat_len}",
                    v.vehicle_id,
                    v.features.len()
                )));
            }
            if v.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { context: format!("features of vehicle {}", v.vehicle_id) });
            }
            if vehicle_index.insert(v.vehicle_id, i).is_some() {
                return Err(Error::Config(format!("duplicate vehicle id {}", v.vehicle_id)));
            }
        }

        let mut purchased = vec![false; vehicles.len()];
        for (row, it) in interactions.iter().enumerate() {
            if !dealer_index.contains_key(&it.dealer_id) {
                return Err(Error::Config(format!(
                    "interaction {row} references unknown dealer {}",
                    it.dealer_id
                )));
            }
            let Some(&vi) = vehicle_index.get(&it.vehicle_id) else {
                return Err(Error::Config(format!(
                    "interaction {row} references unknown vehicle {}",
                    it.vehicle_id
                )));
            };
            if it.timestamp < 0 {
                return Err(Error::Config(format!(
                    "interaction {row} has negative timestamp {}",
                    it.timestamp
                )));
            }
            if it.relation == Relation::Purchase {
                if purchased[vi] {
                    return Err(Error::Config(format!(
                        "vehicle {} purchased more than once (auction items are unique)",
                        it.vehicle_id
                    )));
                }
                purchased[vi] = true;
            }
        }

        let mut per_dealer: Vec<Vec<usize>> = vec![Vec::new(); dealers.len()];
        for (row, it) in interactions.iter().enumerate() {
            per_dealer[dealer_index[&it.dealer_id]].push(row);
        }
        for list in &mut per_dealer {
            // Stable: preserves input order among equal timestamps.
            list.sort_by_key(|&row| interactions[row].timestamp);
        }

        Ok(Self { dealers, vehicles, interactions, dealer_index, vehicle_index, per_dealer })
    }

    pub fn dealer_pos(&self, dealer_id: u32) -> Option<usize> {
        self.dealer_index.get(&dealer_id).copied()
    }

    pub fn vehicle_pos(&self, vehicle_id: u32) -> Option<usize> {
        self.vehicle_index.get(&vehicle_id).copied()
    }

    /// Chronological interaction indices of the dealer at position `pos`.
    pub fn dealer_history(&self, pos: usize) -> &[usize] {
        &self.per_dealer[pos]
    }

    pub fn n_dealers(&self) -> usize {
        self.dealers.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn count(&self, relation: Relation) -> usize {
        self.interactions.iter().filter(|i| i.relation == relation).count()
    }

    pub fn dealer_feature_dim(&self) -> usize {
        self.dealers.first().map(|d| d.features.len()).unwrap_or(0)
    }

    pub fn vehicle_feature_dim(&self) -> usize {
        self.vehicles.first().map(|v| v.features.len()).unwrap_or(0)
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        stats::compute(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dealer(id: u32) -> DealerRecord {
        DealerRecord { dealer_id: id, features: vec![0.0, 1.0] }
    }

    fn vehicle(id: u32) -> VehicleRecord {
        VehicleRecord { vehicle_id: id, features: vec![1.0] }
    }

    fn purchase(d: u32, v: u32, t: i64) -> Interaction {
        Interaction { dealer_id: d, vehicle_id: v, timestamp: t, relation: Relation::Purchase }
    }

    #[test]
    fn chronological_index_is_stable_on_ties() {
        let ds = Dataset::new(
            vec![dealer(1)],
            vec![vehicle(10), vehicle(11), vehicle(12)],
            vec![purchase(1, 12, 5), purchase(1, 10, 5), purchase(1, 11, 2)],
        )
        .unwrap();
        let hist: Vec<u32> = ds
            .dealer_history(0)
            .iter()
            .map(|&i| ds.interactions[i].vehicle_id)
            .collect();
        assert_eq!(hist, vec![11, 12, 10]);
    }

    #[test]
    fn duplicate_purchase_is_rejected() {
        let err = Dataset::new(
            vec![dealer(1), dealer(2)],
            vec![vehicle(10)],
            vec![purchase(1, 10, 1), purchase(2, 10, 2)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("purchased more than once"), "{err}");
    }

    #[test]
    fn unknown_vehicle_is_rejected() {
        let err = Dataset::new(vec![dealer(1)], vec![vehicle(10)], vec![purchase(1, 99, 1)])
            .unwrap_err();
        assert!(err.to_string().contains("unknown vehicle 99"), "{err}");
    }
}
