//! Weight initializers. Draws are always sampled in f64 and cast, so f32
//! training and f64 gradient-check models see identical values for a given
//! stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{Scalar, Tensor};

/// Xavier/Glorot uniform for a `[fan_in, fan_out]` weight matrix.
pub fn xavier_uniform<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::from_f64(rng.random_range(-a..a)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches draw count")
}

/// Gaussian init used for embedding tables.
pub fn normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches draw count")
}

pub fn ones<T: Scalar>(len: usize) -> Tensor<T> {
    Tensor::new(vec![len], vec![T::ONE; len]).expect("non-empty")
}

pub fn zeros_vec<T: Scalar>(len: usize) -> Tensor<T> {
    Tensor::zeros(vec![len])
}
