//! Control-variate Monte Carlo for systems driven by fast colored noise.
//!
//! A system forced by a rapidly decorrelating Gaussian driver `η/ε` is coupled
//! to its white-noise limit `U` through a shared Brownian path. Since
//! `E[F(U)]` can be computed independently (moment ODEs, a backward PDE, a
//! closed form), `E[F(X^ε)] = E[F(U)] + E[F(X^ε) − F(U)]` needs far fewer
//! samples than averaging `F(X^ε)` directly.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod config;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod limit;
pub mod noise;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod systems;
pub mod validation;

pub use error::{Error, Result};
