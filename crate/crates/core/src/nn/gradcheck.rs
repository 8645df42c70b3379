//! Central finite-difference verification of analytic gradients.
//!
//! Checks run in f64 with dropout disabled; finite differences are too noisy
//! in f32 to separate implementation bugs from round-off.

use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{NodeId, Tape};
use super::tensor::Scalar;
use crate::error::Result;

/// Default perturbation for central differences.
pub const GRAD_CHECK_EPSILON: f64 = 1e-4;
/// Acceptance threshold on the max relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-5;

/// Builds the loss graph for a parameter set and reports which leaves bind
/// which parameters. The same builder is invoked repeatedly with perturbed
/// parameter values, so it must be deterministic.
pub type LossBuilder<'a, T> =
    dyn Fn(&ParamSet<T>, &mut Tape<T>) -> Result<(NodeId, Vec<(ParamId, NodeId)>)> + 'a;

/// Compare analytic gradients against central finite differences.
///
/// Returns the max over sampled coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`. At most
/// `max_coords_per_param` coordinates are sampled per parameter (all of them
/// when the parameter is small enough).
pub fn grad_check<T: Scalar>(
    params: &mut ParamSet<T>,
    loss_fn: &LossBuilder<'_, T>,
    epsilon: f64,
    max_coords_per_param: usize,
    sample_seed: u64,
) -> Result<f64> {
    // Analytic pass.
    let mut tape = Tape::new();
    let (loss, bound) = loss_fn(params, &mut tape)?;
    tape.backward(loss)?;
    let mut analytic: Vec<(ParamId, Vec<f64>)> = Vec::new();
    for &(pid, node) in &bound {
        let g = tape
            .grad(node)
            .map(|t| t.data().iter().map(|v| v.to_f64()).collect())
            .unwrap_or_else(|| vec![0.0; params.value(pid).numel()]);
        analytic.push((pid, g));
    }
    drop(tape);

    let mut rng = super::rng::stream(sample_seed, super::rng::Stream::Init, 0x6763);
    let eps = epsilon;
    let mut max_rel = 0.0f64;

    for (pid, grads) in &analytic {
        let numel = params.value(*pid).numel();
        let coords: Vec<usize> = if numel <= max_coords_per_param {
            (0..numel).collect()
        } else {
            // Sample distinct coordinates.
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < max_coords_per_param {
                picked.insert(rng.random_range(0..numel));
            }
            picked.into_iter().collect()
        };
        for &c in &coords {
            let orig = params.value(*pid).data()[c];
            params.value_mut(*pid).data_mut()[c] = orig + T::from_f64(eps);
            let up = eval_loss(params, loss_fn)?;
            params.value_mut(*pid).data_mut()[c] = orig - T::from_f64(eps);
            let down = eval_loss(params, loss_fn)?;
            params.value_mut(*pid).data_mut()[c] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = grads[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn eval_loss<T: Scalar>(params: &ParamSet<T>, loss_fn: &LossBuilder<'_, T>) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = loss_fn(params, &mut tape)?;
    Ok(tape.value(loss).data()[0].to_f64())
}
