#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod combiner;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod market_data;
pub mod optim;
pub mod orchestrate;
pub mod routing;
pub mod scoring;
pub mod specialists;
pub mod stats;

pub use error::{Error, Result};
