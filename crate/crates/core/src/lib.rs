//! Triangular-array moderate-deviation laboratory.
//!
//! The crate builds row-indexed families of independent centered variables,
//! evaluates the quadratic rate functional of their partial-sum paths,
//! checks the tail/Lindeberg conditions that govern the deviation behavior,
//! constructs big/small-block plans and couplings for weakly dependent
//! sequences, and estimates speed-scaled tail probabilities by crude and
//! exponentially tilted Monte Carlo against analytic oracles.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the
// out-of-range sign, which `x <= 0.0` would wave through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod conditions;
pub mod dependence;
pub mod dist;
pub mod error;
pub mod mc;
pub mod models;
pub mod paths;
pub mod quad;
pub mod rng;
pub mod speed;
pub mod stats;
pub mod truncation;

pub use error::{Error, Result};
