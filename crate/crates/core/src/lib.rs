//! Stochastic GAN downscaling of climate fields.
//!
//! The crate builds paired low/high-resolution datasets with analytically
//! known conditional distributions, a dual-stream residual-in-residual dense
//! generator with deep noise injection, a Wasserstein critic conditioned on
//! the covariates, two scale-separated training regimes (frequency separation
//! and stochastic sampling with MAE or CRPS content losses), and the
//! calibration metrics used to verify conditional and full distributions.

pub mod container;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod losses;
pub mod network;
pub mod spectral;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use field::{EnsembleSet, FieldGrid, FieldStack, PairedSample};
