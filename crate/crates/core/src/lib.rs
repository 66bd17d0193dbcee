//! Two-headed graph-attention anomaly detection for multivariate time series.
//!
//! A shared Bi-LSTM + self-attention layer feeds a graph-attention forecaster
//! and a variational reconstruction head. Training balances the two losses
//! with a closed-form minimum-norm weighting computed on the shared output,
//! and scoring flags timestamps whose robustly normalized deviation exceeds
//! the largest value seen on validation data.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod detector;
pub mod error;
pub mod forecast;
pub mod model;
pub mod mtl;
pub mod numgrad;
pub mod plot;
pub mod scoring;
pub mod shared;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
