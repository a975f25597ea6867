//! Learning a risk-neutral reweighting of simulated spot and option paths.
//!
//! The crate is organised bottom-up:
//!
//! * [`market`] holds the path, instrument and cost data model and the terminal
//!   gains functional.
//! * [`simulators`] generates path sets for the binomial, Black–Scholes,
//!   Black–Scholes-with-options and VAR/discrete-local-volatility worlds.
//! * [`dlv`] converts between call price grids and discrete local volatility
//!   surfaces.
//! * [`policy`] contains the trading policy networks, their hand-written
//!   reverse pass and the Adam optimizer.
//! * [`measure`] searches for statistical arbitrage, turns the optimal policy
//!   into path weights and verifies the reweighted market.
//! * [`hedge`] runs deep hedging under the statistical or reweighted measure.
//! * [`pipeline`] wires everything into config-driven batch runs.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dlv;
pub mod error;
pub mod hedge;
pub mod market;
pub mod measure;
mod extended_f64;
mod par;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod simulators;
pub mod stats;

pub use error::{Error, Result};
pub use par::{set_threads, with_threads};
