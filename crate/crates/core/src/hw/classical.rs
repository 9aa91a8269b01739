use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed coefficients and initial states for the three-equation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalHWParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub level0: f64,
    pub trend0: f64,
    /// Initial seasonal coefficients, one per phase.
    pub seasonality: Vec<f64>,
}

impl ClassicalHWParams {
    fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.alpha) || !unit(self.gamma) || !(self.beta == 0.0 || unit(self.beta)) {
            return Err(Error::Config("smoothing coefficients must lie in (0, 1)".into()));
        }
        if self.seasonality.is_empty() {
            return Err(Error::Config("seasonality length must be >= 1".into()));
        }
        if !(self.level0 > 0.0 && self.trend0 > 0.0) || self.seasonality.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::NumericDomain("initial level, trend and seasonality must be positive".into()));
        }
        Ok(())
    }
}

/// Runs level/trend/seasonality updates over `values` and returns the
/// `h`-step forecasts `l_T · b_T^k · s_(T-S+k⁺)` for `k = 1..=h`.
///
/// `beta = 0` is accepted (trend frozen at `trend0`).
pub fn classical_hw_forecast(values: &[f64], params: &ClassicalHWParams, h: usize) -> Result<Vec<f64>> {
    params.validate()?;
    let season = params.seasonality.len();
    if values.len() < season {
        return Err(Error::InsufficientLength {
            context: "classical Holt-Winters".into(),
            needed: season,
            got: values.len(),
        });
    }
    if h == 0 {
        return Err(Error::Config("forecast horizon must be >= 1".into()));
    }
    let (alpha, beta, gamma) = (params.alpha, params.beta, params.gamma);
    let mut seas = params.seasonality.clone();
    seas.reserve(values.len());
    let mut level = params.level0;
    let mut trend = params.trend0;
    for (t, &y) in values.iter().enumerate() {
        let s_old = seas[t];
        let prev = level * trend;
        let new_level = alpha * (y / s_old) + (1.0 - alpha) * prev;
        if !(new_level > 0.0) || !new_level.is_finite() {
            return Err(Error::NumericDomain(format!("non-positive level at t={}", t + 1)));
        }
        let new_trend = beta * (new_level / level) + (1.0 - beta) * trend;
        seas.push(gamma * y / prev + (1.0 - gamma) * s_old);
        level = new_level;
        trend = new_trend;
    }
    let n = values.len();
    Ok((1..=h)
        .map(|k| {
            let wrap = (k - 1) % season + 1;
            level * trend.powi(k as i32) * seas[n + wrap - 1]
        })
        .collect())
}
