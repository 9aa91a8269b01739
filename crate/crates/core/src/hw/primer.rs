use serde::{Deserialize, Serialize};

use super::{seasonal_slot, squash};
use crate::diff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// The `2 + S` learnable smoothing values owned by one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerSeriesParams {
    /// Level smoothing, squashed by the logistic.
    pub alpha_raw: f64,
    /// Seasonality smoothing, squashed by the logistic.
    pub gamma_raw: f64,
    /// Initial seasonal coefficients, squashed by `exp`.
    pub init_seasonality_raw: Vec<f64>,
}

impl PerSeriesParams {
    /// α = γ = 0.5 and unit initial seasonality.
    pub fn neutral(season: usize) -> Self {
        PerSeriesParams {
            alpha_raw: 0.0,
            gamma_raw: 0.0,
            init_seasonality_raw: vec![0.0; season],
        }
    }

    /// Seeds the initial seasonality from the first cycle's ratios to its mean.
    pub fn from_history(values: &[f64], season: usize) -> Self {
        let mut p = PerSeriesParams::neutral(season);
        if values.len() >= season && values[..season].iter().all(|v| *v > 0.0) {
            let mean = values[..season].iter().sum::<f64>() / season as f64;
            for (raw, y) in p.init_seasonality_raw.iter_mut().zip(values) {
                *raw = (y / mean).ln();
            }
        }
        p
    }

    pub fn season(&self) -> usize {
        self.init_seasonality_raw.len()
    }

    pub fn param_count(&self) -> usize {
        2 + self.season()
    }

    pub fn alpha(&self) -> f64 {
        squash(self.alpha_raw)
    }

    pub fn gamma(&self) -> f64 {
        squash(self.gamma_raw)
    }

    pub fn initial_seasonality(&self) -> Vec<f64> {
        self.init_seasonality_raw.iter().map(|r| r.exp()).collect()
    }
}

/// Levels `l_1..l_T` and seasonal coefficients `s_1..s_(T+S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HWState {
    pub levels: Vec<f64>,
    pub seasonalities: Vec<f64>,
    pub season: usize,
}

impl HWState {
    /// Seasonal coefficient paired with 0-based time position `pos`,
    /// wrapping past the stored values.
    pub fn seasonality_at(&self, pos: usize) -> f64 {
        self.seasonalities[seasonal_slot(pos, self.seasonalities.len(), self.season)]
    }

    pub fn seasonality_range(&self, start: usize, len: usize) -> Vec<f64> {
        (start..start + len).map(|p| self.seasonality_at(p)).collect()
    }
}

fn check_inputs(values: &[f64], season: usize) -> Result<()> {
    if season == 0 {
        return Err(Error::Config("seasonality length must be >= 1".into()));
    }
    if values.len() < season {
        return Err(Error::InsufficientLength {
            context: "Holt-Winters primer".into(),
            needed: season,
            got: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NumericDomain(format!("non-positive observation at t={}", i + 1)));
    }
    Ok(())
}

/// Trendless level/seasonality recursion with `l_0 = mean(y_1..y_S)`.
pub fn hybrid_primer(values: &[f64], params: &PerSeriesParams) -> Result<HWState> {
    let season = params.season();
    check_inputs(values, season)?;
    let alpha = params.alpha();
    let gamma = params.gamma();
    let mut seas = params.initial_seasonality();
    seas.reserve(values.len());
    let mut levels = Vec::with_capacity(values.len());
    let mut prev = values[..season].iter().sum::<f64>() / season as f64;
    for (t, &y) in values.iter().enumerate() {
        let s_old = seas[t];
        let level = alpha * (y / s_old) + (1.0 - alpha) * prev;
        if !(level > 0.0) || !level.is_finite() {
            return Err(Error::NumericDomain(format!("non-positive level at t={}", t + 1)));
        }
        seas.push(gamma * (y / prev) + (1.0 - gamma) * s_old);
        levels.push(level);
        prev = level;
    }
    Ok(HWState {
        levels,
        seasonalities: seas,
        season,
    })
}

/// Per-series parameters of `n` series recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapePerSeriesParams {
    /// `n x 1`
    pub alpha_raw: Var,
    /// `n x 1`
    pub gamma_raw: Var,
    /// `n x S`
    pub init_seasonality_raw: Var,
}

impl TapePerSeriesParams {
    /// Stacks `params` row-wise onto `tape`.
    pub fn record(tape: &Tape, params: &[&PerSeriesParams], trainable: bool) -> Self {
        let n = params.len();
        let season = params.first().map_or(0, |p| p.season());
        let a = Matrix::from_fn(n, 1, |r, _| params[r].alpha_raw);
        let g = Matrix::from_fn(n, 1, |r, _| params[r].gamma_raw);
        let s = Matrix::from_fn(n, season, |r, c| params[r].init_seasonality_raw[c]);
        let put = |m| if trainable { tape.leaf(m) } else { tape.constant(m) };
        TapePerSeriesParams {
            alpha_raw: put(a),
            gamma_raw: put(g),
            init_seasonality_raw: put(s),
        }
    }
}

/// Tape handles of a batched primer run.
#[derive(Debug, Clone, Copy)]
pub struct TapeHwState {
    /// `n x T`
    pub levels: Var,
    /// `n x (T + S)`
    pub seasonalities: Var,
    pub season: usize,
}

impl TapeHwState {
    pub fn len(&self) -> usize {
        self.levels.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index into `levels` for series row `row` at time position `pos`.
    pub fn level_index(&self, row: usize, pos: usize) -> usize {
        row * self.levels.cols() + pos
    }

    /// Flat index into `seasonalities` for series row `row` at time position
    /// `pos`, wrapping past the stored values.
    pub fn seasonality_index(&self, row: usize, pos: usize) -> usize {
        let stored = self.seasonalities.cols();
        row * stored + seasonal_slot(pos, stored, self.season)
    }
}

/// The hybrid primer for `n` equal-length series at once. `values` is `n x T`;
/// every step updates all rows with column-vector operations, so gradients
/// reach each row's own parameters only.
pub fn primer_on_tape(tape: &Tape, values: &Matrix, params: &TapePerSeriesParams) -> Result<TapeHwState> {
    let (n, len) = values.shape();
    let season = params.init_seasonality_raw.cols();
    if params.alpha_raw.shape() != (n, 1) || params.gamma_raw.shape() != (n, 1) || params.init_seasonality_raw.rows() != n {
        return Err(Error::Shape(format!("per-series parameters do not cover {n} series")));
    }
    for r in 0..n {
        check_inputs(values.row(r), season)?;
    }
    let alpha = tape.sigmoid(params.alpha_raw);
    let keep_alpha = tape.one_minus(alpha);
    let gamma = tape.sigmoid(params.gamma_raw);
    let keep_gamma = tape.one_minus(gamma);
    let init = tape.exp(params.init_seasonality_raw);

    let mut seas: Vec<Var> = (0..season).map(|i| tape.slice_cols(init, i, 1)).collect();
    seas.reserve(len);
    let mut prev = tape.constant(Matrix::from_fn(n, 1, |r, _| {
        values.row(r)[..season].iter().sum::<f64>() / season as f64
    }));
    let mut levels = Vec::with_capacity(len);
    for t in 0..len {
        let y = tape.constant(Matrix::from_fn(n, 1, |r, _| values.get(r, t)));
        let s_old = seas[t];
        let level = tape.add(tape.mul(alpha, tape.div(y, s_old)), tape.mul(keep_alpha, prev));
        let s_new = tape.add(tape.mul(gamma, tape.div(y, prev)), tape.mul(keep_gamma, s_old));
        seas.push(s_new);
        levels.push(level);
        prev = level;
    }
    let levels = tape.concat_cols(&levels);
    let seasonalities = tape.concat_cols(&seas);
    let bad = tape.with_value(levels, |m| {
        (0..n).find_map(|r| m.row(r).iter().position(|v| !(*v > 0.0) || !v.is_finite()).map(|t| (r, t)))
    });
    if let Some((r, t)) = bad {
        return Err(Error::NumericDomain(format!("non-positive level for series row {r} at t={}", t + 1)));
    }
    Ok(TapeHwState {
        levels,
        seasonalities,
        season,
    })
}
