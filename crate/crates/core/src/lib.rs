//! Coded-aperture snapshot spectral imaging under mask uncertainty: forward model,
//! learned mask-perturbation variance, reconstruction backbone, training strategies,
//! metrics and the experiment harness.

pub mod backbone;
pub mod error;
pub mod gradcheck;
pub mod gstnet;
pub mod harness;
pub mod maskmodel;
pub mod metrics;
pub mod nn;
pub mod optics;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
