//! Land-use and land-cover change modelling.
//!
//! Transition probabilities are calibrated from two observed maps with kernel
//! density estimates of the explanatory features and Bayes' rule, then used to
//! allocate patches of change onto a map.

pub mod density;
pub mod error;
pub mod features;
pub mod raster;
pub mod calibration;
pub mod allocation;
pub mod evaluation;
pub mod cli;

pub use error::{Error, Result};
