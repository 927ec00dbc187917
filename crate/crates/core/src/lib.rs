//! Signature-clustered portfolio construction for daily crypto price data.
//!
//! The pipeline runs once per weekly rebalance date:
//!
//! 1. [`data`] builds the investable universe and the lookback window
//!    (fixed origin of time or rolling window).
//! 2. [`signature`] turns each asset's window into a lead-lag path of
//!    log prices and computes its truncated signature.
//! 3. [`clustering`] standardizes the signature features, runs k-means and
//!    keeps the asset nearest to each centroid.
//! 4. [`allocation`] weights the kept assets (equal weight, minimum
//!    variance, maximum diversification).
//!
//! [`backtest`] drives the loop with proportional fees, [`metrics`]
//! summarizes the value series and [`cli`] wires everything to files.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod backtest;
pub mod cli;
pub mod clustering;
pub mod data;
pub mod error;
pub mod metrics;
pub mod signature;
pub mod synthetic;

pub use error::{Error, Result};
