//! Core of a reinforcement-learning pipeline for high-frequency trading on
//! depth-N limit order books.
//!
//! Everything here is pure computation over in-memory data and builds
//! without `std`: parsing of orderbook rows, synthetic day generation,
//! window selection, the single-unit trading environment, the actor-critic
//! MLP with hand-written gradients, PPO, the Gaussian-process tuner and the
//! backtester. File IO, the CLI and parallel scheduling live in the `hftrl`
//! crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backtest;
pub mod env;
pub mod error;
pub mod lob;
pub mod policy;
pub mod ppo;
pub mod seed;
pub mod smbo;
pub mod synth;
pub mod window;

pub use error::{Error, Result};
