//! Regime-switching market simulation, filtrations, benchmark-constrained dual
//! solver, replicating wealth and utility indifference values.

// Negated float comparisons are deliberate: they also reject NaN.
// Step loops index several parallel per-step arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dual;
pub mod error;
pub mod indifference;
pub mod information;
pub mod market;
pub mod preferences;
pub mod quadrature;
pub mod rng;
pub mod roots;
pub mod scenario;
pub mod stats;
pub mod wealth;

pub use error::{Error, Result};
