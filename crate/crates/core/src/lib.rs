//! Traffic-accident risk engine.
//!
//! The pipeline runs in three phases:
//!
//! 1. [`traffic`] simulates short deterministic traffic scenarios and
//!    [`scenario`] condenses them into per-module occupancy and speed.
//! 2. [`hazard`] turns those statistics into accident probabilities, and the
//!    speed of randomly chosen fleet vehicles is pre-sampled per scenario.
//! 3. [`annual`] composes a year out of scenarios, samples accident counts and
//!    [`severity`] losses, and [`riskstats`] / [`approx`] evaluate and price
//!    the resulting aggregate loss.
//!
//! [`experiment`] wires everything together behind a configuration file.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annual;
pub mod approx;
mod error;
pub mod experiment;
pub mod hazard;
pub mod riskstats;
pub mod rng;
pub mod scenario;
pub mod severity;
pub mod traffic;

pub use error::{Error, Result};

// The guide's code listings run as doctests, one module per chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/traffic.md")]
    mod traffic {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/hazard.md")]
    mod hazard {}
    #[doc = include_str!("../../../book/src/severity.md")]
    mod severity {}
    #[doc = include_str!("../../../book/src/annual-loss.md")]
    mod annual_loss {}
    #[doc = include_str!("../../../book/src/riskstats.md")]
    mod riskstats {}
    #[doc = include_str!("../../../book/src/approx.md")]
    mod approx {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
