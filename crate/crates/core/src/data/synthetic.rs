//! Synthetic auction data with planted latent-factor structure.
//!
//! The generator simulates one auction per vehicle:
//!
//! 1. Every dealer gets a latent vector `u` and an activity weight; every
//!    vehicle gets a latent vector `v`. Coordinate 0 is a shared "quality"
//!    axis: a dealer's appetite for quality scales with the same draw as its
//!    activity, so busy dealers chase broadly desirable vehicles.
//! 2. Observed features are fixed random linear maps of the latents plus
//!    `N(0, noise_scale^2)` noise, so preferences are recoverable from the
//!    attribute vectors alone.
//! 3. Each vehicle is auctioned once at a random timestamp in front of a
//!    pool of dealers sampled by activity. The purchasing dealer is drawn
//!    from `softmax(u . v)` over the pool; additional pool dealers bid before
//!    the purchase, with the per-vehicle bid count driven by how much the
//!    pool wants the vehicle (mean `bids_per_purchase_mean` overall). Bids
//!    therefore concentrate on high-affinity vehicles.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng::{stream, Stream};

use super::{Dataset, DealerRecord, Interaction, Relation, VehicleRecord};

/// Dealers attending one auction.
const POOL_SIZE: usize = 32;
/// Std of each latent coordinate. Sets how peaked the winner softmax is:
/// larger values make the highest-affinity pool member win almost always,
/// which keeps planted preferences recoverable through the auction noise.
const LATENT_STD: f64 = 1.7;
/// Spread of the log-normal dealer activity weights.
const ACTIVITY_SPREAD: f64 = 1.0;
/// Noise mixed into the quality-appetite coordinate on top of the activity
/// draw.
const QUALITY_NOISE: f64 = 0.5;
/// Cap on the per-vehicle expected bid count, as a multiple of the mean.
const BID_RATE_CAP: f64 = 6.0;
/// Auction timestamps fall in `[TIME_BASE, TIME_BASE + TIME_RANGE)`.
const TIME_BASE: i64 = 1_500_000_000;
const TIME_RANGE: i64 = 100_000_000;
/// Bids precede their purchase by 1 second to 3 days.
const BID_LEAD_MAX: i64 = 259_200;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_dealers: usize,
    pub n_vehicles: usize,
    pub latent_dim: usize,
    pub dealer_feature_dim: usize,
    pub vehicle_feature_dim: usize,
    pub bids_per_purchase_mean: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_dealers: 500,
            n_vehicles: 20_000,
            latent_dim: 8,
            dealer_feature_dim: 16,
            vehicle_feature_dim: 24,
            bids_per_purchase_mean: 2.0,
            noise_scale: 0.1,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_dealers", self.n_dealers),
            ("n_vehicles", self.n_vehicles),
            ("latent_dim", self.latent_dim),
            ("dealer_feature_dim", self.dealer_feature_dim),
            ("vehicle_feature_dim", self.vehicle_feature_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Config("noise_scale must be >= 0".into()));
        }
        if self.bids_per_purchase_mean < 0.0 {
            return Err(Error::Config("bids_per_purchase_mean must be >= 0".into()));
        }
        Ok(())
    }
}

/// Ground truth behind a generated dataset, for oracle-style tests and
/// planted-signal evaluation.
pub struct SyntheticTrace {
    /// `[n_dealers][latent_dim]`
    pub dealer_latents: Vec<Vec<f64>>,
    /// `[n_vehicles][latent_dim]`
    pub vehicle_latents: Vec<Vec<f64>>,
    /// Auction pool per vehicle (dealer positions, ascending).
    pub pools: Vec<Vec<u32>>,
    /// Winner probabilities aligned with `pools`.
    pub win_probs: Vec<Vec<f64>>,
    /// Winning dealer position per vehicle.
    pub winners: Vec<u32>,
}

impl SyntheticTrace {
    pub fn affinity(&self, dealer_pos: usize, vehicle_pos: usize) -> f64 {
        self.dealer_latents[dealer_pos]
            .iter()
            .zip(&self.vehicle_latents[vehicle_pos])
            .map(|(a, b)| a * b)
            .sum()
    }
}

pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    generate_with_trace(config).map(|(ds, _)| ds)
}

pub fn generate_with_trace(config: &SyntheticConfig) -> Result<(Dataset, SyntheticTrace)> {
    config.validate()?;
    let k = config.latent_dim;
    let std_normal = Normal::new(0.0, 1.0).expect("valid");

    // Latents and activity. One shared draw feeds both the activity weight
    // and the quality appetite so the two correlate.
    let mut rng = stream(config.seed, Stream::Synthetic, 0);
    let mut dealer_latents = Vec::with_capacity(config.n_dealers);
    let mut activity = Vec::with_capacity(config.n_dealers);
    let quality_norm = (1.0 + QUALITY_NOISE * QUALITY_NOISE).sqrt();
    for _ in 0..config.n_dealers {
        let z: f64 = std_normal.sample(&mut rng);
        activity.push((ACTIVITY_SPREAD * z).exp());
        let mut u = vec![0.0f64; k];
        u[0] = LATENT_STD * (z + QUALITY_NOISE * std_normal.sample(&mut rng)) / quality_norm;
        for coord in u.iter_mut().skip(1) {
            *coord = LATENT_STD * std_normal.sample(&mut rng);
        }
        dealer_latents.push(u);
    }
    let mut vehicle_latents = Vec::with_capacity(config.n_vehicles);
    for _ in 0..config.n_vehicles {
        let v: Vec<f64> = (0..k).map(|_| LATENT_STD * std_normal.sample(&mut rng)).collect();
        vehicle_latents.push(v);
    }

    // Fixed random linear maps latent -> features, then observation noise.
    let mut map_rng = stream(config.seed, Stream::Synthetic, 1);
    let scale = 1.0 / (k as f64).sqrt();
    let mut linear_map = |rows: usize| -> Vec<f64> {
        (0..rows * k).map(|_| std_normal.sample(&mut map_rng) * scale).collect()
    };
    let dealer_map = linear_map(config.dealer_feature_dim);
    let vehicle_map = linear_map(config.vehicle_feature_dim);

    let mut noise_rng = stream(config.seed, Stream::Synthetic, 2);
    let project = |map: &[f64], latent: &[f64], dim: usize, noise_rng: &mut rand_chacha::ChaCha8Rng| {
        (0..dim)
            .map(|r| {
                let clean: f64 = map[r * k..(r + 1) * k].iter().zip(latent).map(|(m, l)| m * l).sum();
                (clean + config.noise_scale * std_normal.sample(noise_rng)) as f32
            })
            .collect::<Vec<f32>>()
    };
    let dealers: Vec<DealerRecord> = dealer_latents
        .iter()
        .enumerate()
        .map(|(i, u)| DealerRecord {
            dealer_id: i as u32,
            features: project(&dealer_map, u, config.dealer_feature_dim, &mut noise_rng),
        })
        .collect();
    let vehicles: Vec<VehicleRecord> = vehicle_latents
        .iter()
        .enumerate()
        .map(|(j, v)| VehicleRecord {
            vehicle_id: j as u32,
            features: project(&vehicle_map, v, config.vehicle_feature_dim, &mut noise_rng),
        })
        .collect();

    // Pass 1: pools and pool affinities per auction.
    let pool_size = POOL_SIZE.min(config.n_dealers);
    let mut pools: Vec<Vec<u32>> = Vec::with_capacity(config.n_vehicles);
    let mut affinities: Vec<Vec<f64>> = Vec::with_capacity(config.n_vehicles);
    let mut wants: Vec<f64> = Vec::with_capacity(config.n_vehicles);
    for j in 0..config.n_vehicles {
        let mut rng = stream(config.seed, Stream::Synthetic, 16 + 2 * j as u64);
        let pool = sample_by_activity(&activity, pool_size, &mut rng);
        let aff: Vec<f64> = pool
            .iter()
            .map(|&d| dot(&dealer_latents[d as usize], &vehicle_latents[j]))
            .collect();
        // How much this pool wants the vehicle; drives the bid volume.
        let want = aff.iter().map(|&s| s.exp()).sum::<f64>() / aff.len() as f64;
        wants.push(want);
        pools.push(pool);
        affinities.push(aff);
    }
    let mean_want = wants.iter().sum::<f64>() / wants.len().max(1) as f64;

    // Pass 2: outcomes.
    let mut interactions = Vec::new();
    let mut winners = Vec::with_capacity(config.n_vehicles);
    let mut win_probs = Vec::with_capacity(config.n_vehicles);
    for j in 0..config.n_vehicles {
        let mut rng = stream(config.seed, Stream::Synthetic, 17 + 2 * j as u64);
        let pool = &pools[j];
        let probs = softmax(&affinities[j]);
        let purchase_ts = TIME_BASE + rng.random_range(0..TIME_RANGE);
        let winner = pool[sample_categorical(&probs, &mut rng)];

        let rate = (config.bids_per_purchase_mean * wants[j] / mean_want)
            .min(config.bids_per_purchase_mean * BID_RATE_CAP);
        let n_bid_draws = if rate > 0.0 {
            Poisson::new(rate).expect("positive rate").sample(&mut rng) as usize
        } else {
            0
        };
        let mut bidders: Vec<u32> = Vec::new();
        for _ in 0..n_bid_draws {
            let b = pool[sample_categorical(&probs, &mut rng)];
            if b != winner && !bidders.contains(&b) {
                bidders.push(b);
            }
        }
        let mut bids: Vec<Interaction> = bidders
            .into_iter()
            .map(|dealer| Interaction {
                dealer_id: dealer,
                vehicle_id: j as u32,
                timestamp: (purchase_ts - 1 - rng.random_range(0..BID_LEAD_MAX)).max(0),
                relation: Relation::Bid,
            })
            .collect();
        bids.sort_by_key(|b| (b.timestamp, b.dealer_id));
        interactions.extend(bids);
        interactions.push(Interaction {
            dealer_id: winner,
            vehicle_id: j as u32,
            timestamp: purchase_ts,
            relation: Relation::Purchase,
        });
        winners.push(winner);
        win_probs.push(probs);
    }

    let dataset = Dataset::new(dealers, vehicles, interactions)?;
    let trace = SyntheticTrace { dealer_latents, vehicle_latents, pools, win_probs, winners };
    Ok((dataset, trace))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn sample_categorical(probs: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    let draw: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Weighted sampling without replacement (Efraimidis-Spirakis keys), result
/// sorted ascending for determinism downstream.
fn sample_by_activity(weights: &[f64], n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<u32> {
    if n >= weights.len() {
        return (0..weights.len() as u32).collect();
    }
    let mut keyed: Vec<(f64, u32)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / w, i as u32)
        })
        .collect();
    keyed.select_nth_unstable_by(n - 1, |a, b| b.0.total_cmp(&a.0));
    let mut picked: Vec<u32> = keyed[..n].iter().map(|&(_, i)| i).collect();
    picked.sort_unstable();
    picked
}
