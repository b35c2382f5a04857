//! Online changepoint detection for temporally correlated series.

// `!(x > y)` style checks are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod baselines;
pub mod detector;
pub mod estimation;
pub mod evaluation;
pub mod kalman;
pub mod pipeline;
pub mod rng;
pub mod temporal_model;

pub use error::{Error, Result};
