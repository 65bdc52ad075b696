//! Feature attribution by the probability of necessity and sufficiency.
//!
//! A subset of input dimensions is scored by a dual-stage perturbation test:
//! observed samples are reweighted and resampled to match a factual event
//! ([`sir`]), then perturbed the other way to estimate how necessary and how
//! sufficient the subset is for the prediction ([`pns`]). [`optimize`] finds a
//! high-scoring subset by gradient ascent on a relaxed mask, and [`metrics`]
//! holds the usual attribution quality measures.

pub mod adam;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod parallel;
pub mod perturb;
pub mod pns;
pub mod rng;
pub mod sir;

pub use error::{FansError, Result, Side};
