//! Hybrid exponential-smoothing / dilated-LSTM forecasting.
//!
//! Per-series Holt-Winters smoothing normalizes and deseasonalizes each series;
//! a shared stack of dilated LSTM blocks predicts the normalized horizon, which
//! is mapped back through the series' last level and seasonality.

pub mod data;
pub mod diff;
pub mod error;
pub mod hw;
pub mod metrics;
pub mod synthetic;
pub mod train;

pub use data::{Category, DatasetSplit, Frequency, FrequencyProfile, SeriesRecord};
pub use error::{Error, Result};
pub use hw::{HWState, PerSeriesParams};
pub use train::{Model, TrainConfig, Trainer, TrainingSet};
