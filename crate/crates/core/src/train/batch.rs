use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{pinball_term, Matrix};
use crate::error::{Error, Result};
use crate::hw::Window;

/// A window addressed by series position and 0-based anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowRef {
    pub series: usize,
    pub anchor: usize,
}

/// Shuffles `windows` with a generator seeded by `seed` and cuts them into
/// consecutive batches of `batch_size` (the last may be shorter).
///
/// Batches carry references rather than values: window contents depend on
/// the current per-series parameters and are rebuilt at every step.
pub fn make_batches(windows: &[WindowRef], batch_size: usize, seed: u64) -> Result<Vec<Vec<WindowRef>>> {
    if windows.is_empty() {
        return Err(Error::InsufficientLength {
            context: "batching".into(),
            needed: 1,
            got: 0,
        });
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order = windows.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[WindowRef]>::to_vec).collect())
}

/// Shuffle seed of a given epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Materialized windows stacked into rectangular matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `batch x (I + 6)`
    pub inputs: Matrix,
    /// `batch x O`
    pub targets: Matrix,
    pub levels: Vec<f64>,
    /// `batch x O`
    pub seasonality: Matrix,
    pub series_ids: Vec<usize>,
    /// `batch x O`, 1 where the target counts.
    pub mask: Matrix,
}

impl WindowBatch {
    pub fn from_windows(windows: &[(usize, &Window)]) -> Result<Self> {
        let first = windows.first().ok_or(Error::InsufficientLength {
            context: "window batch".into(),
            needed: 1,
            got: 0,
        })?;
        let (width, out) = (first.1.input.len(), first.1.target.len());
        if windows.iter().any(|(_, w)| w.input.len() != width || w.target.len() != out) {
            return Err(Error::Shape("windows in a batch must share input and target widths".into()));
        }
        let n = windows.len();
        Ok(WindowBatch {
            inputs: Matrix::from_fn(n, width, |r, c| windows[r].1.input[c]),
            targets: Matrix::from_fn(n, out, |r, c| windows[r].1.target[c]),
            levels: windows.iter().map(|(_, w)| w.level).collect(),
            seasonality: Matrix::from_fn(n, out, |r, c| windows[r].1.target_seasonality[c]),
            series_ids: windows.iter().map(|(s, _)| *s).collect(),
            mask: Matrix::full(n, out, 1.0),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends fully masked rows filled with `fill` up to `rows` rows.
    pub fn padded(&self, rows: usize, fill: f64) -> WindowBatch {
        let n = self.len();
        let extend = |m: &Matrix, v: f64| Matrix::from_fn(rows.max(n), m.cols(), |r, c| if r < n { m.get(r, c) } else { v });
        let mut levels = self.levels.clone();
        levels.resize(rows.max(n), fill);
        let mut series_ids = self.series_ids.clone();
        series_ids.resize(rows.max(n), usize::MAX);
        WindowBatch {
            inputs: extend(&self.inputs, fill),
            targets: extend(&self.targets, fill),
            levels,
            seasonality: extend(&self.seasonality, fill),
            series_ids,
            mask: extend(&self.mask, 0.0),
        }
    }
}

/// Masked-mean pinball loss on plain matrices.
pub fn pinball_loss(predicted: &Matrix, actual: &Matrix, tau: f64, mask: Option<&Matrix>) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    if predicted.shape() != actual.shape() || mask.is_some_and(|m| m.shape() != actual.shape()) {
        return Err(Error::Shape("pinball operands differ in shape".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..actual.len() {
        if mask.is_some_and(|m| m.as_slice()[k] == 0.0) {
            continue;
        }
        total += pinball_term(actual.as_slice()[k], predicted.as_slice()[k], tau);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count as f64)
}
