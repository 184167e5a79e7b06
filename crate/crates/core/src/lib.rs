//! Hierarchical Bayesian level set inversion on structured grids.
//!
//! The pieces fit together in one pipeline: a spectral Gaussian prior with a
//! length-scale hyperparameter generates smooth latent fields, a level set
//! map turns them into piecewise-constant phase fields, a forward model maps
//! phases to observations, and a Metropolis-within-Gibbs sampler explores
//! the posterior over both the latent field and the length scale.

pub mod darcy;
pub mod error;
pub mod forward;
pub mod grid;
pub mod levelset;
pub mod posterior;
pub mod prior;
pub mod sampler;
pub mod stats;
pub mod transform;

pub use error::{Error, Result};
