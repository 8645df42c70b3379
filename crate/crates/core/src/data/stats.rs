//! Dataset summary statistics.

use serde::{Deserialize, Serialize};

use super::{Dataset, Relation};
use crate::error::{Error, Result};

/// Summary mirroring the production dataset report. Densities are percents:
/// `100 * count / (users * items)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub purchases: usize,
    pub biddings: usize,
    pub purchase_density: f64,
    pub bidding_density: f64,
    pub unique_item_pct: f64,
    pub user_features: usize,
    pub item_features: usize,
}

/// Purchase and bidding densities (in percent) from raw counts.
pub fn densities_from_counts(
    users: usize,
    items: usize,
    purchases: usize,
    biddings: usize,
) -> Result<(f64, f64)> {
    if users == 0 || items == 0 {
        return Err(Error::Protocol(format!(
            "density undefined for users={users}, items={items}"
        )));
    }
    let denom = users as f64 * items as f64;
    Ok((
        100.0 * purchases as f64 / denom,
        100.0 * biddings as f64 / denom,
    ))
}

pub(super) fn compute(ds: &Dataset) -> Result<DatasetStats> {
    let users = ds.n_dealers();
    let items = ds.n_vehicles();
    let purchases = ds.count(Relation::Purchase);
    let biddings = ds.count(Relation::Bid);
    let (purchase_density, bidding_density) =
        densities_from_counts(users, items, purchases, biddings)?;
    let distinct_purchased = {
        let mut seen = vec![false; items];
        let mut n = 0usize;
        for it in &ds.interactions {
            if it.relation == Relation::Purchase {
                let pos = ds.vehicle_pos(it.vehicle_id).expect("validated");
                if !seen[pos] {
                    seen[pos] = true;
                    n += 1;
                }
            }
        }
        n
    };
    let unique_item_pct = if purchases == 0 {
        100.0
    } else {
        100.0 * distinct_purchased as f64 / purchases as f64
    };
    Ok(DatasetStats {
        users,
        items,
        purchases,
        biddings,
        purchase_density,
        bidding_density,
        unique_item_pct,
        user_features: ds.dealer_feature_dim(),
        item_features: ds.vehicle_feature_dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn production_scale_counts_round_to_published_densities() {
        let (p, b) = densities_from_counts(3220, 269_104, 269_104, 375_349).unwrap();
        assert!((p - 0.031).abs() < 0.0005, "purchase density {p}");
        assert!((b - 0.043).abs() < 0.0005, "bidding density {b}");
        // Purchases == items makes the purchase density exactly 100/users.
        assert!((p - 100.0 / 3220.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_single_cell_is_full_density() {
        let (p, _) = densities_from_counts(1, 1, 1, 0).unwrap();
        assert_eq!(p, 100.0);
    }

    #[test]
    fn zero_users_is_undefined() {
        assert!(densities_from_counts(0, 5, 0, 0).is_err());
        assert!(densities_from_counts(5, 0, 0, 0).is_err());
    }
}
