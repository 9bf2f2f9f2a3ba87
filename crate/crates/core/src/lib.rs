//! Extreme-value mixture modelling and quantile forecasting for
//! zero-inflated, heavy-tailed time series.

pub mod auto_lstm;
pub mod autodiff;
pub mod data_io;
pub mod distributions;
pub mod error;
pub mod forecaster;
pub mod gradcheck;
pub mod mixture;
pub mod optim;
pub mod pipeline;
pub mod special;
pub mod stats;
pub mod tensor;
pub mod threshold_scan;

pub use error::{Error, ErrorClass, Result};
