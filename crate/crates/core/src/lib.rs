//! Gaussian-puff tracer dispersion with particle-filter assimilation of
//! bag-sampler dosages.
//!
//! Pipeline per assimilation window: station winds are perturbed per
//! particle ([`windfield`]), interpolated and mass-adjusted onto a grid,
//! puffs are advected and diffused through the window ([`puff`], [`model`]),
//! receptor dosages are integrated ([`sensors`]), and particle weights are
//! updated against observed dosages ([`assimilation`]). [`metrics`] scores
//! the result and [`harness`] drives whole trials.

pub mod assimilation;
pub mod error;
pub mod geom;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod puff;
pub mod rng;
pub mod sensors;
pub mod windfield;

pub use error::{Error, Result};
