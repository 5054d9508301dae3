//! Intra-day agent-based price formation with surrogate-driven calibration.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] simulates the three-agent (fundamental, momentum, noise)
//!   price dynamics and generates geometric Brownian motion reference paths.
//! * [`smoother`] extracts a latent fundamental value series from observed
//!   prices with a local-level Kalman filter and RTS smoother.
//! * [`facts`] computes return statistics and the four-part stylised-facts
//!   distance between a simulated and a historical day.
//! * [`sobol`], [`gbt`] and [`hyperopt`] provide the quasi-random parameter
//!   pool, the gradient-boosted-tree surrogate and its Gaussian-process
//!   hyperparameter search.
//! * [`calibrate`] runs the train / predict / supplement loop.
//! * [`io`] reads and writes minute-price CSV files.
//! * [`report`] writes plot-ready CSV reports and runs GBM scenarios.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod error;
pub mod facts;
pub mod gbt;
pub mod hyperopt;
pub mod io;
pub mod model;
mod par;
pub mod report;
pub mod seed;
pub mod smoother;
pub mod sobol;
pub mod synthetic;

pub use error::{Error, Result};
pub use model::{ModelParams, PricePath};
