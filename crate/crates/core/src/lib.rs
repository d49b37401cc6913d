//! Spectrum and power allocation for multi-user terahertz links inside
//! absorption-coefficient spectral regions.
//!
//! The crate covers the molecular-absorption models, sub-band arithmetic,
//! per-user rates, a from-scratch feed-forward network trained by a
//! primal-dual scheme, two model-based baselines and the experiment harness
//! that compares them.

pub mod absorption;
pub mod baseline;
pub mod error;
pub mod experiments;
pub mod neural;
pub mod quadrature;
pub mod rate;
pub mod scenario;
pub mod selfcheck;
pub mod spectrum;
pub mod trainer;

pub use error::{Error, Result};
