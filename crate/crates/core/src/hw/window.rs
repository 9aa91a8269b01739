use super::primer::HWState;
use crate::data::{FrequencyProfile, NUM_CATEGORIES};
use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!("{what}: window length {a} vs seasonality length {b}")))
    }
}

/// `x_i = y_i / (level · s_i)`.
pub fn deseasonalize_normalize(y: &[f64], level: f64, seasonality: &[f64]) -> Result<Vec<f64>> {
    check_lengths(y.len(), seasonality.len(), "deseasonalize")?;
    Ok(y.iter().zip(seasonality).map(|(v, s)| v / (level * s)).collect())
}

/// `ŷ_i = r_i · level · s_i`.
pub fn reseasonalize_denormalize(r: &[f64], level: f64, seasonality: &[f64]) -> Result<Vec<f64>> {
    check_lengths(r.len(), seasonality.len(), "reseasonalize")?;
    Ok(r.iter().zip(seasonality).map(|(v, s)| v * level * s).collect())
}

/// One training example cut from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// 0-based position of the last input observation.
    pub anchor: usize,
    /// Normalized inputs followed by the category one-hot (`I + 6`).
    pub input: Vec<f64>,
    /// Normalized targets (`O`).
    pub target: Vec<f64>,
    pub level: f64,
    pub input_seasonality: Vec<f64>,
    pub target_seasonality: Vec<f64>,
}

/// Windows a series of length `len` yields: `len - I - O + 1`, or 0.
pub fn window_count(len: usize, profile: &FrequencyProfile) -> usize {
    (len + 1).saturating_sub(profile.input_window + profile.horizon)
}

/// Cuts every full input/target window, ordered by anchor.
pub fn window_series(
    values: &[f64],
    state: &HWState,
    profile: &FrequencyProfile,
    category_onehot: &[f64; NUM_CATEGORIES],
) -> Result<Vec<Window>> {
    let (inp, out) = (profile.input_window, profile.horizon);
    let len = values.len();
    if len < inp + out {
        return Err(Error::InsufficientLength {
            context: "windowing".into(),
            needed: inp + out,
            got: len,
        });
    }
    if state.levels.len() != len {
        return Err(Error::Shape(format!(
            "state covers {} steps, series has {len}",
            state.levels.len()
        )));
    }
    (inp - 1..=len - out - 1)
        .map(|anchor| {
            let start = anchor + 1 - inp;
            let level = state.levels[anchor];
            let input_seasonality = state.seasonality_range(start, inp);
            let target_seasonality = state.seasonality_range(anchor + 1, out);
            let mut input = deseasonalize_normalize(&values[start..=anchor], level, &input_seasonality)?;
            input.extend_from_slice(category_onehot);
            let target = deseasonalize_normalize(&values[anchor + 1..=anchor + out], level, &target_seasonality)?;
            Ok(Window {
                anchor,
                input,
                target,
                level,
                input_seasonality,
                target_seasonality,
            })
        })
        .collect()
}
