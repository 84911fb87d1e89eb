//! Nonparametric estimation of private-value densities in first-price
//! auctions, with and without a monotonicity constraint on the bidding
//! strategy, plus bootstrap inference.

pub mod bootstrap;
pub mod boundary;
pub mod error;
pub mod estimate;
pub mod hetero;
pub mod kernels;
mod par;
pub mod polysum;
pub mod quadrature;
pub mod rearrange;
pub mod sample;
pub mod simulate;
pub mod strategy;
pub mod variance;

pub use error::{Error, Result};
