use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::batch::{make_batches, WindowRef};
use super::config::TrainConfig;
use super::model::{Model, TrainingSet};
use super::trainer::batch_gradients;
use crate::diff::Matrix;
use crate::error::{Error, Result};

/// Relative loss agreement required between the two paths.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-6;

/// Result of one gradient epoch at fixed parameters.
#[derive(Debug, Clone)]
pub struct GradientEpoch {
    /// Mean pinball over every window.
    pub loss: f64,
    /// Sum over windows of each window's loss gradient, per network parameter.
    pub network: Vec<Matrix>,
    pub windows: usize,
}

/// Forward, loss and backward over every planned batch without updating
/// the model; gradients are accumulated.
pub fn gradient_epoch(model: &Model, set: &TrainingSet, plans: &[Vec<WindowRef>], cfg: &TrainConfig) -> Result<GradientEpoch> {
    let mut network: Vec<Matrix> = model.stack.params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
    let (mut total, mut windows) = (0.0, 0usize);
    for plan in plans {
        let g = batch_gradients(model, set, plan, cfg)?;
        for (acc, mut grad) in network.iter_mut().zip(g.network) {
            grad.scale_assign(g.rows as f64);
            acc.add_assign(&grad);
        }
        total += g.loss * g.rows as f64;
        windows += g.rows;
    }
    Ok(GradientEpoch {
        loss: total / windows as f64,
        network,
        windows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Seconds for one epoch in batches of `batch_size`.
    pub batched_s: f64,
    /// Seconds for one epoch one window at a time.
    pub looped_s: f64,
    /// `looped_s / batched_s`.
    pub speedup: f64,
    pub batch_size: usize,
    pub n_series: usize,
    pub windows: usize,
    /// Timed epochs per path; the fastest of each is reported.
    #[serde(default = "one")]
    pub repeats: usize,
    pub batched_loss: f64,
    pub looped_loss: f64,
}

fn one() -> usize {
    1
}

/// True when `a` and `b` agree to [`EQUIVALENCE_TOLERANCE`] relative to the larger magnitude.
pub fn losses_equivalent(a: f64, b: f64) -> bool {
    (a - b).abs() <= EQUIVALENCE_TOLERANCE * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Times one gradient epoch in batches of `batch_size` against the same
/// windows in the same order one at a time. Timings are returned only when
/// both epoch losses agree.
pub fn benchmark_batched_vs_looped(model: &Model, set: &TrainingSet, batch_size: usize, cfg: &TrainConfig) -> Result<BenchmarkReport> {
    benchmark_repeated(model, set, batch_size, cfg, 1)
}

/// As [`benchmark_batched_vs_looped`], timing each path `repeats` times in
/// alternating order and keeping each path's fastest epoch.
pub fn benchmark_repeated(model: &Model, set: &TrainingSet, batch_size: usize, cfg: &TrainConfig, repeats: usize) -> Result<BenchmarkReport> {
    if repeats == 0 {
        return Err(Error::Config("benchmark repeats must be >= 1".into()));
    }
    model.check_series(set)?;
    let windows = set.windows();
    let batched = make_batches(&windows, batch_size, cfg.seed)?;
    let looped = make_batches(&windows, 1, cfg.seed)?;

    // warm-up: allocator and caches
    gradient_epoch(model, set, &batched[..1], cfg)?;
    gradient_epoch(model, set, &looped[..looped.len().min(batch_size)], cfg)?;

    let timed = |plans: &[Vec<WindowRef>]| -> Result<(f64, GradientEpoch)> {
        let start = Instant::now();
        let e = gradient_epoch(model, set, plans, cfg)?;
        Ok((start.elapsed().as_secs_f64(), e))
    };
    let (mut batched_s, mut looped_s) = (f64::INFINITY, f64::INFINITY);
    let (mut b, mut l) = (None, None);
    for r in 0..repeats {
        let order: [bool; 2] = if r % 2 == 0 { [true, false] } else { [false, true] };
        for is_batched in order {
            if is_batched {
                let (t, e) = timed(&batched)?;
                batched_s = batched_s.min(t);
                b = Some(e);
            } else {
                let (t, e) = timed(&looped)?;
                looped_s = looped_s.min(t);
                l = Some(e);
            }
        }
    }
    let (b, l) = (b.expect("repeats >= 1"), l.expect("repeats >= 1"));

    if !losses_equivalent(b.loss, l.loss) {
        return Err(Error::Equivalence {
            batched: b.loss,
            looped: l.loss,
        });
    }
    Ok(BenchmarkReport {
        batched_s,
        looped_s,
        speedup: looped_s / batched_s,
        batch_size,
        n_series: set.len(),
        windows: windows.len(),
        repeats,
        batched_loss: b.loss,
        looped_loss: l.loss,
    })
}
