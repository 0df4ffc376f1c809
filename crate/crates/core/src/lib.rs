//! Natural actor-critic for finite POMDPs with finite-state controllers.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece:
//!
//! - [`model`]: tabular POMDP models, the Bayes filter and belief algebra.
//! - [`controller`]: internal-state dynamics, sliding-block controllers,
//!   feature maps and the softmax-linear policy.
//! - [`sampling`]: warm-start generation of the initial history, the
//!   discounted visitation sampler and trajectory rollouts.
//! - [`critic`]: multi-step TD learning with ball projection.
//! - [`actor`]: compatible function approximation by projected SGD and the
//!   outer natural actor-critic loop.
//! - [`oracle`]: exact ground truth on small instances (value functions,
//!   multi-step fixed points, visitation measures, error terms).
//! - [`stability`]: ergodicity certificates, backward variables, smoothing
//!   kernels and filter contraction experiments.
//!
//! IO, configuration and the command line live in the `pomdp-nac` crate.
#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod actor;
pub mod benchmarks;
pub mod controller;
pub mod critic;
mod error;
pub mod linalg;
pub mod math;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod sampling;
pub mod stability;

pub use error::{Error, Result};
