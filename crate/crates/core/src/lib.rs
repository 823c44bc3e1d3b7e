//! Bayesian line narrowing of spectra.
//!
//! Pipeline: Fourier self-deconvolution with Burg linear prediction gives a
//! quasi-likelihood for line-shape parameters, sampled by adaptive-tempering
//! SMC. The resulting line-narrowed spectra are smoothed with a
//! log-Gaussian Cox process whose sampled local maxima form the posterior
//! over peak locations and peak counts.

pub mod error;
pub mod fourier;
pub mod lgcp;
pub mod sbc;
pub mod smc;
pub mod spectrum;

pub use error::{Error, Result};
