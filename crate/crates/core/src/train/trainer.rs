use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::batch::{epoch_seed, make_batches, WindowRef};
use super::config::TrainConfig;
use super::model::{ForecastRequest, Model, TrainingSet};
use super::optim::{clip_global_norm, AdamMoments};
use crate::data::{one_hot_category, NUM_CATEGORIES};
use crate::diff::{forward_stack, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::hw::{hybrid_primer, primer_on_tape, PerSeriesParams, TapePerSeriesParams};
use crate::metrics::smape;

/// Normalized windows of one batch, built on a tape from the current
/// per-series parameters.
#[derive(Debug, Clone)]
pub struct TapeWindows {
    /// `batch x (I + 6)`
    pub inputs: Var,
    /// Normalized targets, `batch x O`.
    pub targets: Var,
    /// Raw target observations, `batch x O`.
    pub actuals: Var,
    /// Level at each anchor, `batch x 1`.
    pub levels: Var,
    /// Seasonal coefficients of the target steps, `batch x O`.
    pub target_seasonality: Var,
    /// Sorted series positions present in the batch; row `r` of
    /// `per_series` belongs to `touched[r]`.
    pub touched: Vec<usize>,
    pub per_series: TapePerSeriesParams,
}

fn with_series_context(err: Error, model: &Model, set: &TrainingSet, touched: &[usize]) -> Error {
    if !matches!(err, Error::NumericDomain(_)) {
        return err;
    }
    for &s in touched {
        if let Err(e) = hybrid_primer(&set.series[s].split.train, &model.series[s].params) {
            return Error::NumericDomain(format!("series {:?}: {e}", set.series[s].id));
        }
    }
    err
}

/// Runs the smoothing recursion for every series in `plan` and cuts the
/// planned windows out of its levels and seasonality. With `attach` the
/// per-series parameters are tape leaves, so the loss reaches them.
pub fn windows_on_tape(tape: &Tape, model: &Model, set: &TrainingSet, plan: &[WindowRef], attach: bool) -> Result<TapeWindows> {
    if plan.is_empty() {
        return Err(Error::InsufficientLength {
            context: "batch".into(),
            needed: 1,
            got: 0,
        });
    }
    let p = &set.profile;
    let (inp, out) = (p.input_window, p.horizon);
    let mut touched: Vec<usize> = plan.iter().map(|w| w.series).collect();
    touched.sort_unstable();
    touched.dedup();

    let len = set.train_len();
    let values = Matrix::from_fn(touched.len(), len, |r, c| set.series[touched[r]].split.train[c]);
    let refs: Vec<&PerSeriesParams> = touched.iter().map(|&s| &model.series[s].params).collect();
    let per_series = TapePerSeriesParams::record(tape, &refs, attach);
    let state =
        primer_on_tape(tape, &values, &per_series).map_err(|e| with_series_context(e, model, set, &touched))?;

    let row_of = |s: usize| touched.binary_search(&s).expect("series collected above");
    let b = plan.len();
    let level_idx = plan.iter().map(|w| state.level_index(row_of(w.series), w.anchor)).collect();
    let seas_idx = |first: &dyn Fn(&WindowRef) -> usize, width: usize| -> Vec<usize> {
        plan.iter()
            .flat_map(|w| {
                let (row, start) = (row_of(w.series), first(w));
                (0..width).map(move |j| state.seasonality_index(row, start + j))
            })
            .collect()
    };
    let input_start = |w: &WindowRef| w.anchor + 1 - inp;
    let target_start = |w: &WindowRef| w.anchor + 1;
    let observed = |first: &dyn Fn(&WindowRef) -> usize, width: usize| {
        Matrix::from_fn(b, width, |r, j| set.series[plan[r].series].split.train[first(&plan[r]) + j])
    };

    let levels = tape.gather(state.levels, level_idx, b, 1);
    let seas_in = tape.gather(state.seasonalities, seas_idx(&input_start, inp), b, inp);
    let target_seasonality = tape.gather(state.seasonalities, seas_idx(&target_start, out), b, out);
    let y_in = tape.constant(observed(&input_start, inp));
    let actuals = tape.constant(observed(&target_start, out));

    let x = tape.div(y_in, tape.mul(levels, seas_in));
    let onehot = tape.constant(Matrix::from_fn(b, NUM_CATEGORIES, |r, c| {
        one_hot_category(set.series[plan[r].series].category)[c]
    }));
    let inputs = tape.concat_cols(&[x, onehot]);
    let targets = tape.div(actuals, tape.mul(levels, target_seasonality));
    Ok(TapeWindows {
        inputs,
        targets,
        actuals,
        levels,
        target_seasonality,
        touched,
        per_series,
    })
}

/// Loss and gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Mean pinball over the batch's targets.
    pub loss: f64,
    pub rows: usize,
    /// One matrix per network parameter, in store order.
    pub network: Vec<Matrix>,
    /// `(series position, [d alpha_raw, d gamma_raw, d init_seasonality_raw..])`
    /// for every touched series; empty when states are detached.
    pub series: Vec<(usize, Vec<f64>)>,
}

/// Forward, normalized-scale pinball loss and backward for one batch.
pub fn batch_gradients(model: &Model, set: &TrainingSet, plan: &[WindowRef], cfg: &TrainConfig) -> Result<BatchGradients> {
    let tape = Tape::new();
    let net = model.stack.record(&tape, true);
    let w = windows_on_tape(&tape, model, set, plan, cfg.attach_states)?;
    let pred = forward_stack(&tape, w.inputs, model.stack_config(), &net)?;
    let loss = tape.pinball(pred, w.targets, cfg.tau, None)?;
    let value = tape.item(loss);
    if !value.is_finite() {
        return Err(Error::NumericDomain(format!("non-finite batch loss {value}")));
    }
    let grads = tape.backward(loss)?;
    let network = net.flat.iter().map(|&v| grads.wrt(v)).collect();
    let series = if cfg.attach_states {
        let ga = grads.wrt(w.per_series.alpha_raw);
        let gg = grads.wrt(w.per_series.gamma_raw);
        let gs = grads.wrt(w.per_series.init_seasonality_raw);
        w.touched
            .iter()
            .enumerate()
            .map(|(r, &s)| {
                let mut g = vec![ga.get(r, 0), gg.get(r, 0)];
                g.extend_from_slice(gs.row(r));
                (s, g)
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(BatchGradients {
        loss: value,
        rows: plan.len(),
        network,
        series,
    })
}

fn flatten(p: &PerSeriesParams) -> Vec<f64> {
    let mut v = vec![p.alpha_raw, p.gamma_raw];
    v.extend_from_slice(&p.init_seasonality_raw);
    v
}

fn unflatten(p: &mut PerSeriesParams, v: &[f64]) {
    p.alpha_raw = v[0];
    p.gamma_raw = v[1];
    p.init_seasonality_raw.copy_from_slice(&v[2..]);
}

/// Per-series one-step-ahead validation scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub forecasts: Vec<Vec<f64>>,
    pub smape: Vec<f64>,
    pub mean_smape: f64,
}

/// Forecasts each validation segment from the end of its training segment
/// and scores it. Records no gradients.
pub fn validate(model: &Model, set: &TrainingSet) -> Result<ValidationReport> {
    let requests: Vec<ForecastRequest> = set
        .series
        .iter()
        .enumerate()
        .map(|(i, s)| ForecastRequest {
            series: i,
            history: &s.split.train,
            category: s.category,
        })
        .collect();
    let forecasts = model.forecast(&requests)?;
    let scores = forecasts
        .iter()
        .zip(&set.series)
        .map(|(f, s)| smape(&s.split.validation, f))
        .collect::<Result<Vec<_>>>()?;
    let mean_smape = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(ValidationReport {
        forecasts,
        smape: scores,
        mean_smape,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops once `patience` epochs pass without the validation score dropping
/// by more than `min_delta` below the best so far.
pub fn early_stop_check(history: &[f64], patience: usize, min_delta: f64) -> StopDecision {
    let Some((&first, rest)) = history.split_first() else {
        return StopDecision::Continue;
    };
    let mut best = first;
    let mut since = 0;
    for &v in rest {
        if best - v > min_delta {
            best = v;
            since = 0;
        } else {
            since += 1;
        }
    }
    if since >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_pinball: f64,
    pub val_smape: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the best validation score; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_model: Model,
    pub stopped_early: bool,
}

/// Owns the model and optimizer state for a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    network_moments: Vec<AdamMoments>,
    series_moments: Vec<AdamMoments>,
    network_steps: u64,
    series_steps: Vec<u64>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.check_compatible(&model.profile)?;
        let network_moments = model.stack.params.iter().map(|p| AdamMoments::new(p.value.len())).collect();
        let series_moments = model.series.iter().map(|s| AdamMoments::new(s.params.param_count())).collect();
        let series_steps = vec![0; model.series.len()];
        Ok(Trainer {
            model,
            config,
            network_moments,
            series_moments,
            network_steps: 0,
            series_steps,
        })
    }

    /// Clips and applies one batch's gradients. Series absent from the
    /// batch keep their parameters and moments untouched.
    pub fn apply(&mut self, mut g: BatchGradients) {
        if let Some(max) = self.config.gradient_clip {
            let blocks = g
                .network
                .iter_mut()
                .map(Matrix::as_mut_slice)
                .chain(g.series.iter_mut().map(|(_, v)| v.as_mut_slice()));
            clip_global_norm(blocks, max);
        }
        self.network_steps += 1;
        let lr = self.config.learning_rate_network;
        for ((p, m), grad) in self.model.stack.params.iter_mut().zip(&mut self.network_moments).zip(&g.network) {
            m.step(p.value.as_mut_slice(), grad.as_slice(), lr, self.network_steps);
        }
        let lr = self.config.learning_rate_per_series;
        for (s, grad) in &g.series {
            self.series_steps[*s] += 1;
            let params = &mut self.model.series[*s].params;
            let mut flat = flatten(params);
            self.series_moments[*s].step(&mut flat, grad, lr, self.series_steps[*s]);
            unflatten(params, &flat);
        }
    }

    /// One pass over every window in seeded shuffled batches with a step
    /// after each. Returns the window-weighted mean batch loss.
    pub fn train_epoch(&mut self, set: &TrainingSet, epoch: usize) -> Result<f64> {
        self.model.check_series(set)?;
        let plans = make_batches(&set.windows(), self.config.batch_size, epoch_seed(self.config.seed, epoch))?;
        let (mut total, mut count) = (0.0, 0usize);
        for (b, plan) in plans.iter().enumerate() {
            let g = batch_gradients(&self.model, set, plan, &self.config).map_err(|e| match e {
                Error::NumericDomain(m) => Error::NumericDomain(format!("epoch {}, batch {b}: {m}", epoch + 1)),
                other => other,
            })?;
            total += g.loss * g.rows as f64;
            count += g.rows;
            self.apply(g);
        }
        Ok(total / count as f64)
    }

    /// Trains for `config.epochs` epochs, validating after each and calling
    /// `on_epoch` with its log record. Keeps the best-validation model.
    pub fn fit(&mut self, set: &TrainingSet, mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>) -> Result<FitOutcome> {
        let mut history = Vec::new();
        let mut scores = Vec::new();
        let mut best: Option<(usize, f64, Model)> = None;
        let mut stopped_early = false;
        for epoch in 0..self.config.epochs {
            let start = Instant::now();
            let train_pinball = self.train_epoch(set, epoch)?;
            let val_smape = validate(&self.model, set)?.mean_smape;
            let record = EpochRecord {
                epoch: epoch + 1,
                train_pinball,
                val_smape,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {} train pinball {:.6} validation sMAPE {:.4} ({:.2}s)",
                record.epoch,
                train_pinball,
                val_smape,
                record.seconds
            );
            on_epoch(&record)?;
            history.push(record);
            if best.as_ref().map_or(true, |(_, s, _)| val_smape < *s) {
                best = Some((epoch + 1, val_smape, self.model.clone()));
            }
            scores.push(val_smape);
            if let Some(patience) = self.config.patience {
                if early_stop_check(&scores, patience, self.config.min_delta) == StopDecision::Stop {
                    stopped_early = epoch + 1 < self.config.epochs;
                    break;
                }
            }
        }
        let (best_epoch, best_model) = match best {
            Some((e, _, m)) => (Some(e), m),
            None => (None, self.model.clone()),
        };
        Ok(FitOutcome {
            history,
            best_epoch,
            best_model,
            stopped_early,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Category, Frequency, FrequencyProfile, SeriesRecord};
    use crate::diff::StackWeights;

    fn profile() -> FrequencyProfile {
        FrequencyProfile {
            frequency: Frequency::Quarterly,
            seasonality: 4,
            horizon: 2,
            input_window: 4,
            dilations: vec![vec![1, 2]],
            hidden_size: 4,
            min_length: 10,
        }
    }

    fn set(n: usize) -> TrainingSet {
        let recs: Vec<SeriesRecord> = (0..n)
            .map(|i| {
                let v = (0..14)
                    .map(|t| (20.0 + 3.0 * i as f64) * (1.0 + 0.02 * t as f64) * [1.1, 0.8, 1.3, 0.8][t % 4])
                    .collect();
                SeriesRecord::new(format!("S{i}"), Category::ALL[i % 6], Frequency::Quarterly, v)
            })
            .collect();
        TrainingSet::new(profile(), &recs).unwrap()
    }

    #[test]
    fn tape_windows_match_scalar_windows() {
        let s = set(3);
        let m = Model::init(&s, 2).unwrap();
        let plan = [WindowRef { series: 2, anchor: 5 }, WindowRef { series: 0, anchor: 3 }];
        let tape = Tape::new();
        let w = windows_on_tape(&tape, &m, &s, &plan, true).unwrap();
        let (x, t) = (tape.value(w.inputs), tape.value(w.targets));
        for (r, wr) in plan.iter().enumerate() {
            let ser = &s.series[wr.series];
            let st = hybrid_primer(&ser.split.train, &m.series[wr.series].params).unwrap();
            let ws = crate::hw::window_series(&ser.split.train, &st, &s.profile, &one_hot_category(ser.category)).unwrap();
            let win = ws.iter().find(|w| w.anchor == wr.anchor).unwrap();
            assert_eq!(x.row(r), win.input.as_slice());
            assert_eq!(t.row(r), win.target.as_slice());
        }
        assert_eq!(w.touched, vec![0, 2]);
    }

    #[test]
    fn zero_learning_rates_leave_parameters() {
        let s = set(3);
        let m = Model::init(&s, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate_network: 0.0,
            learning_rate_per_series: 0.0,
            batch_size: 4,
            ..Default::default()
        };
        let mut tr = Trainer::new(m.clone(), cfg).unwrap();
        let loss = tr.train_epoch(&s, 0).unwrap();
        assert!(loss.is_finite());
        assert_eq!(tr.model, m);
    }

    #[test]
    fn untouched_series_bit_unchanged() {
        let s = set(3);
        let m = Model::init(&s, 2).unwrap();
        let mut tr = Trainer::new(m.clone(), TrainConfig::default()).unwrap();
        let plan = [WindowRef { series: 0, anchor: 4 }, WindowRef { series: 0, anchor: 5 }];
        let g = batch_gradients(&tr.model, &s, &plan, &tr.config).unwrap();
        assert_eq!(g.series.len(), 1);
        tr.apply(g);
        assert_ne!(tr.model.series[0], m.series[0]);
        assert_eq!(tr.model.series[1], m.series[1]);
        assert_eq!(tr.model.series[2], m.series[2]);
    }

    #[test]
    fn detached_states_give_no_series_gradient() {
        let s = set(2);
        let m = Model::init(&s, 2).unwrap();
        let cfg = TrainConfig {
            attach_states: false,
            ..Default::default()
        };
        let g = batch_gradients(&m, &s, &s.windows(), &cfg).unwrap();
        assert!(g.series.is_empty());
        let attached = batch_gradients(&m, &s, &s.windows(), &TrainConfig::default()).unwrap();
        assert_eq!(g.loss, attached.loss);
    }

    #[test]
    fn validation_shapes_zero_network_and_read_only() {
        let s = set(3);
        let mut m = Model::init(&s, 2).unwrap();
        let v1 = validate(&m, &s).unwrap();
        assert!(v1.forecasts.iter().all(|f| f.len() == 2));
        assert_eq!(v1, validate(&m, &s).unwrap());
        m.stack = StackWeights::zeros(m.stack_config()).unwrap();
        let v0 = validate(&m, &s).unwrap();
        assert!(v0.forecasts.iter().flatten().all(|&f| f == 0.0));
        assert_eq!(v0.mean_smape, 200.0);
    }

    #[test]
    fn early_stop_rules() {
        use StopDecision::*;
        assert_eq!(early_stop_check(&[5.0, 4.0, 3.0, 2.0], 2, 0.0), Continue);
        assert_eq!(early_stop_check(&[5.0, 5.0, 5.0], 2, 0.0), Stop);
        assert_eq!(early_stop_check(&[5.0, 5.0], 2, 0.0), Continue);
        assert_eq!(early_stop_check(&[10.0, 9.5], 1, 0.5), Stop);
        assert_eq!(early_stop_check(&[10.0, 9.25], 1, 0.5), Continue);
    }

    #[test]
    fn fit_logs_every_epoch_and_keeps_best() {
        let s = set(3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let mut tr = Trainer::new(Model::init(&s, 5).unwrap(), cfg).unwrap();
        let mut lines = 0;
        let out = tr
            .fit(&s, |_| {
                lines += 1;
                Ok(())
            })
            .unwrap();
        assert_eq!((lines, out.history.len()), (3, 3));
        let best = out.history.iter().map(|r| r.val_smape).fold(f64::INFINITY, f64::min);
        assert_eq!(out.history[out.best_epoch.unwrap() - 1].val_smape, best);
        assert_eq!(validate(&out.best_model, &s).unwrap().mean_smape, best);

        let mut none = Trainer::new(Model::init(&s, 5).unwrap(), TrainConfig { epochs: 0, ..Default::default() }).unwrap();
        let out = none.fit(&s, |_| Ok(())).unwrap();
        assert!(out.history.is_empty() && out.best_epoch.is_none());
        assert_eq!(out.best_model, Model::init(&s, 5).unwrap());
    }
}
