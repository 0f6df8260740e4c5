//! Simulation and analysis toolkit for LoRa 2.4 GHz RF time-of-flight ranging.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`geometry`] lays out the reference points (RPs) and the base station.
//! 2. [`signal`] estimates time of flight by correlating a PN code, and also
//!    provides the clock-quantized packet-level baseline.
//! 3. [`simulator`] produces a measurement campaign whose errors depend on
//!    temperature and humidity.
//! 4. [`datastore`] and [`stats`] read and write the CSV field log and compute
//!    per-RP error statistics.
//! 5. [`neural`] trains a dense regressor that predicts the absolute ranging
//!    error from the environment and uses it to compensate measurements.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datastore;
pub mod error;
pub mod geometry;
pub mod neural;
pub mod signal;
pub mod simulator;
pub mod stats;

mod rng;

pub use error::{Error, Result};
pub use rng::derive_rng;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
