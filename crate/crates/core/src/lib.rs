//! Monte-Carlo simulator and power-allocation solver for downlink two-cell
//! CoMP-NOMA.
//!
//! Gains are noise-normalized over the system band; powers are in mW and
//! rates in bits/s throughout.

pub mod channel;
pub mod comp;
pub mod config;
pub mod error;
pub mod harness;
pub mod noma;
pub mod output;
pub mod power;
pub mod scenario;

pub use error::{Error, Result};
