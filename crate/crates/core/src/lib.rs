//! Saliency-derived image datasets for small-sample classification and
//! sum-rule evaluation of classifier ensembles.

pub mod augment;
pub mod config;
pub mod cos;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod gbvs;
pub mod imaging;
pub mod mask;
pub mod spectral;

pub use error::{Error, Result};
