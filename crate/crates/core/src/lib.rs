//! Equilibrium outcomes of markets in which firms sell prediction models to
//! a consumer who averages the models she buys.
//!
//! Every market quantity is a function of the models' bias-variance
//! summaries: [`models`] builds them, [`combiner`] turns sets of them into
//! consumer utilities, and [`pricing`], [`entry`], [`differentiation`] and
//! [`deterrence`] solve the simultaneous and sequential games on top.
//! [`mcoracle`] checks the closed-form summaries by simulation.

pub mod combiner;
pub mod deterrence;
pub mod differentiation;
pub mod entry;
pub mod error;
pub mod mcoracle;
pub mod models;
pub mod pricing;

/// Library version, echoed into every CLI output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use combiner::{coalition_utility, loss_of_weights, optimal_weights, Coalition, WeightVector};
pub use error::{Error, Result};
pub use models::{MarketConfig, ModelSummary};
