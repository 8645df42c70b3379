//! Deterministic tensor kernel with reverse-mode differentiation.
//!
//! Everything runs on the CPU over plain row-major buffers. Any internal
//! parallelism writes disjoint output rows in a fixed order, so results are
//! bit-identical across runs and thread counts.

pub mod adam;
pub mod gradcheck;
pub mod init;
mod kernels;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use gradcheck::{grad_check, GRAD_CHECK_EPSILON, GRAD_CHECK_TOL};
pub use params::{ParamId, ParamSet, Parameter, TapeBinding};
pub use tape::{NodeId, Tape, LAYER_NORM_EPS};
pub use tensor::{Scalar, Tensor};
