//! Spatio-temporal deep kriging for irregular station networks.
//!
//! The pipeline embeds space-time points with multi-resolution Wendland and
//! Gaussian bases, maps the embedding to a non-crossing (lower, median,
//! upper) quantile triple with a deep ReLU network trained on pinball loss,
//! and forecasts gridded fields with a quantile ConvLSTM.

pub mod autodiff;
pub mod basis;
pub mod error;
pub mod forecast;
pub mod gridstack;
pub mod ingest;
pub mod metrics;
pub mod provenance;
pub mod quantile;
pub mod stdk;

pub use error::{Error, Result};
