//! M4-style accuracy measures and report tables.
//!
//! ```text
//! sMAPE = (200 / h) · Σ |y - ŷ| / (|y| + |ŷ|)          (0/0 terms count as 0)
//! MASE  = mean |y - ŷ| / ((1 / (n - S)) · Σ_{t>S} |y_t - y_(t-S)|)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Category, Frequency};
use crate::error::{Error, Result};

fn check_pair(actual: &[f64], forecast: &[f64]) -> Result<()> {
    if actual.len() != forecast.len() {
        return Err(Error::Shape(format!(
            "actual has {} values, forecast {}",
            actual.len(),
            forecast.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Shape("empty horizon".into()));
    }
    Ok(())
}

pub fn smape(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_pair(actual, forecast)?;
    let total: f64 = actual
        .iter()
        .zip(forecast)
        .map(|(y, f)| {
            let denom = y.abs() + f.abs();
            if denom == 0.0 {
                0.0
            } else {
                (y - f).abs() / denom
            }
        })
        .sum();
    Ok(200.0 * total / actual.len() as f64)
}

pub fn mase(insample: &[f64], actual: &[f64], forecast: &[f64], season: usize) -> Result<f64> {
    check_pair(actual, forecast)?;
    if season == 0 || insample.len() <= season {
        return Err(Error::InsufficientLength {
            context: "MASE in-sample".into(),
            needed: season + 1,
            got: insample.len(),
        });
    }
    let scale = insample.windows(season + 1).map(|w| (w[season] - w[0]).abs()).sum::<f64>()
        / (insample.len() - season) as f64;
    if scale == 0.0 {
        return Err(Error::UndefinedMase);
    }
    let mae = actual.iter().zip(forecast).map(|(y, f)| (y - f).abs()).sum::<f64>() / actual.len() as f64;
    Ok(mae / scale)
}

/// Repeats the last observed cycle: `ŷ_i = y_(T - S + ((i - 1) mod S) + 1)`.
pub fn seasonal_naive(train: &[f64], season: usize, h: usize) -> Result<Vec<f64>> {
    if season == 0 || train.len() < season {
        return Err(Error::InsufficientLength {
            context: "seasonal naive".into(),
            needed: season.max(1),
            got: train.len(),
        });
    }
    let tail = &train[train.len() - season..];
    Ok((0..h).map(|i| tail[i % season]).collect())
}

/// `Σ score·count / Σ count`.
pub fn weighted_mean(items: &[(f64, usize)]) -> f64 {
    let n: usize = items.iter().map(|(_, c)| c).sum();
    if n == 0 {
        return f64::NAN;
    }
    items.iter().map(|(s, c)| s * *c as f64).sum::<f64>() / n as f64
}

/// Scores of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub id: String,
    pub category: Category,
    pub frequency: Frequency,
    pub forecast: Vec<f64>,
    pub actual: Vec<f64>,
    pub smape: f64,
    /// `None` when the in-sample scale is zero.
    pub mase: Option<f64>,
    pub baseline_smape: Option<f64>,
    pub baseline_mase: Option<f64>,
}

/// Mean scores of a group of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub count: usize,
    pub smape: f64,
    pub mase: Option<f64>,
    /// Rows whose MASE was undefined and left out of `mase`.
    pub mase_undefined: usize,
    pub baseline_smape: Option<f64>,
    pub baseline_mase: Option<f64>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl GroupScore {
    fn from_rows(rows: &[&ForecastRow]) -> Self {
        GroupScore {
            count: rows.len(),
            smape: mean_of(rows.iter().map(|r| r.smape)).unwrap_or(f64::NAN),
            mase: mean_of(rows.iter().filter_map(|r| r.mase)),
            mase_undefined: rows.iter().filter(|r| r.mase.is_none()).count(),
            baseline_smape: mean_of(rows.iter().filter_map(|r| r.baseline_smape)),
            baseline_mase: mean_of(rows.iter().filter_map(|r| r.baseline_mase)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub by_frequency: BTreeMap<Frequency, GroupScore>,
    pub by_category: BTreeMap<Category, GroupScore>,
    /// Keyed `(frequency, category)`; the Table-6 cells.
    pub by_frequency_category: Vec<(Frequency, Category, GroupScore)>,
    /// Series-count weighted mean of the per-frequency scores.
    pub overall: GroupScore,
}

pub fn aggregate(rows: &[ForecastRow]) -> Result<Aggregates> {
    if rows.is_empty() {
        return Err(Error::NoSeries);
    }
    let mut by_freq: BTreeMap<Frequency, Vec<&ForecastRow>> = BTreeMap::new();
    let mut by_cat: BTreeMap<Category, Vec<&ForecastRow>> = BTreeMap::new();
    let mut cells: BTreeMap<(Frequency, Category), Vec<&ForecastRow>> = BTreeMap::new();
    for r in rows {
        by_freq.entry(r.frequency).or_default().push(r);
        by_cat.entry(r.category).or_default().push(r);
        cells.entry((r.frequency, r.category)).or_default().push(r);
    }
    let by_frequency: BTreeMap<_, _> = by_freq.iter().map(|(f, rs)| (*f, GroupScore::from_rows(rs))).collect();
    let by_category = by_cat.iter().map(|(c, rs)| (*c, GroupScore::from_rows(rs))).collect();
    let by_frequency_category = cells
        .iter()
        .map(|((f, c), rs)| (*f, *c, GroupScore::from_rows(rs)))
        .collect();

    let weighted = |pick: &dyn Fn(&GroupScore) -> Option<(f64, usize)>| {
        let items: Vec<(f64, usize)> = by_frequency.values().filter_map(pick).collect();
        (!items.is_empty()).then(|| weighted_mean(&items))
    };
    let all: Vec<&ForecastRow> = rows.iter().collect();
    let mut overall = GroupScore::from_rows(&all);
    overall.smape = weighted(&|g| Some((g.smape, g.count))).unwrap_or(f64::NAN);
    overall.mase = weighted(&|g| g.mase.map(|m| (m, g.count - g.mase_undefined)));
    overall.baseline_smape = weighted(&|g| g.baseline_smape.map(|m| (m, g.count)));
    Ok(Aggregates {
        by_frequency,
        by_category,
        by_frequency_category,
        overall,
    })
}

/// Per-series rows plus aggregates, renderable as text, CSV or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub rows: Vec<ForecastRow>,
    pub aggregates: Aggregates,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl ForecastReport {
    pub fn new(rows: Vec<ForecastRow>) -> Result<Self> {
        let aggregates = aggregate(&rows)?;
        Ok(ForecastReport { rows, aggregates })
    }

    /// Aligned-column text: a per-frequency table and a category x frequency sMAPE table.
    pub fn to_text(&self) -> String {
        let a = &self.aggregates;
        let mut s = String::new();
        let _ = writeln!(s, "sMAPE by frequency");
        let _ = writeln!(
            s,
            "{:<12}{:>8}{:>14}{:>16}{:>12}{:>16}",
            "Frequency", "Series", "Model sMAPE", "Baseline sMAPE", "Model MASE", "Baseline MASE"
        );
        let mut line = |name: &str, g: &GroupScore| {
            let _ = writeln!(
                s,
                "{:<12}{:>8}{:>14.3}{:>16}{:>12}{:>16}",
                name,
                g.count,
                g.smape,
                opt(g.baseline_smape),
                opt(g.mase),
                opt(g.baseline_mase)
            );
        };
        for (f, g) in &a.by_frequency {
            line(f.name(), g);
        }
        line("Average", &a.overall);

        let freqs: Vec<Frequency> = a.by_frequency.keys().copied().collect();
        let _ = writeln!(s);
        let _ = writeln!(s, "sMAPE by category");
        let _ = write!(s, "{:<14}", "Category");
        for f in &freqs {
            let _ = write!(s, "{:>12}", f.name());
        }
        let _ = writeln!(s);
        for c in Category::ALL {
            let _ = write!(s, "{:<14}", c.name());
            for f in &freqs {
                let cell = a
                    .by_frequency_category
                    .iter()
                    .find(|(ff, cc, _)| ff == f && *cc == c)
                    .map(|(_, _, g)| g.smape);
                let _ = write!(s, "{:>12}", opt(cell));
            }
            let _ = writeln!(s);
        }
        let _ = write!(s, "{:<14}", "Overall");
        for f in &freqs {
            let _ = write!(s, "{:>12}", opt(Some(a.by_frequency[f].smape)));
        }
        let _ = writeln!(s);
        if a.overall.mase_undefined > 0 {
            let _ = writeln!(s, "\n{} series with undefined MASE excluded", a.overall.mase_undefined);
        }
        s
    }

    /// One row per series.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,category,frequency,smape,mase,baseline_smape,baseline_mase,forecast,actual\n");
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.id,
                r.category,
                r.frequency,
                r.smape,
                cell(r.mase),
                cell(r.baseline_smape),
                cell(r.baseline_mase),
                join(&r.forecast),
                join(&r.actual)
            );
        }
        s
    }

    /// The aggregate block as pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.aggregates)?)
    }
}
