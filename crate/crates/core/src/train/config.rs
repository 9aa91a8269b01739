use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted mini-batch.
pub const MAX_BATCH_SIZE: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate_network: f64,
    pub learning_rate_per_series: f64,
    /// Pinball quantile.
    pub tau: f64,
    /// Global-norm clip over each step's gradients; `None` disables clipping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_clip: Option<f64>,
    pub seed: u64,
    /// Keep levels and seasonality on the tape so the loss reaches the
    /// per-series parameters. When false they enter as constants.
    pub attach_states: bool,
    /// Stop after this many epochs without a validation improvement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    /// Improvement must exceed this to count.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 512,
            learning_rate_network: 1e-3,
            learning_rate_per_series: 1e-2,
            tau: 0.5,
            gradient_clip: Some(20.0),
            seed: 0,
            attach_states: true,
            patience: None,
            min_delta: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.batch_size == 0 || self.batch_size > MAX_BATCH_SIZE {
            return fail(format!("batch_size must be in 1..={MAX_BATCH_SIZE}, got {}", self.batch_size));
        }
        if !(self.learning_rate_network >= 0.0) || !(self.learning_rate_per_series >= 0.0) {
            return fail("learning rates must be >= 0".into());
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0) {
                return fail(format!("gradient_clip must be positive, got {c}"));
            }
        }
        if self.patience == Some(0) {
            return fail("patience must be >= 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return fail("min_delta must be >= 0".into());
        }
        Ok(())
    }
}
