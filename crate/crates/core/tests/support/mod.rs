//! Oracles shared by the integration tests and the acceptance suite:
//! central finite differences, a time-indexed Holt-Winters transcription
//! and small fixtures.

#![allow(dead_code)]

use std::collections::BTreeMap;

use esrnn_core::diff::{
    forward_stack, lstm_cell, LstmCellWeights, Matrix, StackConfig, StackWeights, Tape, Var,
};
use esrnn_core::hw::{primer_on_tape, ClassicalHWParams, TapePerSeriesParams};
use esrnn_core::synthetic::{seasonal_records, SyntheticOptions};
use esrnn_core::train::{windows_on_tape, WindowRef};
use esrnn_core::{Frequency, FrequencyProfile, Model, PerSeriesParams, TrainingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Compares tape gradients of `build` with central differences for every
/// input. `build` returns a scalar loss from leaves holding `inputs`.
/// Returns the worst relative error over the inputs.
pub fn check_scalar_fn(inputs: &[Matrix], build: &dyn Fn(&Tape, &[Var]) -> Var) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = build(&tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");

    let mut worst: f64 = 0.0;
    for (k, m) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]);
        let numeric = central_diff(m.as_slice(), FD_STEP, |probe| {
            let t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, mj)| {
                    if j == k {
                        t.leaf(Matrix::from_vec(m.rows(), m.cols(), probe.to_vec()))
                    } else {
                        t.leaf(mj.clone())
                    }
                })
                .collect();
            let l = build(&t, &vs);
            t.item(l)
        });
        worst = worst.max(rel_err(analytic.as_slice(), &numeric));
    }
    worst
}

/// `sum(weights ⊙ out)` so every output element gets a distinct adjoint.
pub fn weighted_sum(tape: &Tape, out: Var, weights: &Matrix) -> Var {
    let w = tape.constant(weights.clone());
    tape.sum(tape.mul(out, w))
}

/// One primitive gradient case.
pub struct PrimitiveCase {
    pub name: &'static str,
    pub inputs: Vec<Matrix>,
    pub op: Box<dyn Fn(&Tape, &[Var]) -> Var>,
}

/// Every tape primitive, including broadcasting variants, on random inputs
/// kept inside each op's smooth domain.
pub fn primitive_cases(seed: u64) -> Vec<PrimitiveCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r: usize, c: usize| random_matrix(&mut rng, r, c, -1.5, 1.5);
    let a34 = m(3, 4);
    let b34 = m(3, 4);
    let b45 = m(4, 5);
    let row = m(1, 4);
    let col = m(3, 1);
    let one = m(1, 1);
    let pos = |x: &Matrix| x.map(|v| 0.5 + v.abs());
    let h = 3;
    let z = m(4, 4 * h);
    let c = m(4, h);
    let x2 = m(4, 5);
    let w2 = m(5, 4 * h);
    let h2 = m(4, h);
    let u2 = m(h, 4 * h);
    let bias = m(1, 4 * h);
    // residuals kept away from the pinball kink
    let pred = m(3, 4);
    let actual = Matrix::from_fn(3, 4, |r, c| {
        let v = pred.get(r, c);
        if (r + c) % 2 == 0 {
            v + 0.3 + 0.1 * r as f64
        } else {
            v - 0.4 - 0.1 * c as f64
        }
    });
    let mut mask = Matrix::full(3, 4, 1.0);
    mask.set(1, 2, 0.0);
    mask.set(2, 0, 0.0);

    let case = |name, inputs: Vec<Matrix>, op: Box<dyn Fn(&Tape, &[Var]) -> Var>| PrimitiveCase { name, inputs, op };
    let out_w = |r: usize, c: usize, s: u64| {
        let mut g = ChaCha8Rng::seed_from_u64(s);
        random_matrix(&mut g, r, c, -1.0, 1.0)
    };
    let w34 = out_w(3, 4, 1);
    let w35 = out_w(3, 5, 2);
    let w43 = out_w(4, h, 3);
    let w4x = out_w(4, 4 * h, 4);
    let ws = move |t: &Tape, v: Var| {
        let w = match v.shape() {
            (3, 4) => &w34,
            (3, 5) => &w35,
            (4, 3) => &w43,
            (4, 12) => &w4x,
            _ => panic!("no weights for {:?}", v.shape()),
        };
        weighted_sum(t, v, w)
    };
    let ws = std::rc::Rc::new(ws);
    macro_rules! w {
        () => {{
            let ws = ws.clone();
            move |t: &Tape, v: Var| ws(t, v)
        }};
    }

    let mut cases = Vec::new();
    let f = w!();
    cases.push(case("matmul", vec![a34.clone(), b45.clone()], Box::new(move |t, v| f(t, t.matmul(v[0], v[1])))));
    for (name, rhs) in [("same", b34.clone()), ("row", row.clone()), ("col", col.clone()), ("scalar", one.clone())] {
        let (f1, f2, f3, f4) = (w!(), w!(), w!(), w!());
        let nm = |op: &str| -> &'static str { Box::leak(format!("{op}/{name}").into_boxed_str()) };
        cases.push(case(nm("add"), vec![a34.clone(), rhs.clone()], Box::new(move |t, v| f1(t, t.add(v[0], v[1])))));
        cases.push(case(nm("sub"), vec![a34.clone(), rhs.clone()], Box::new(move |t, v| f2(t, t.sub(v[0], v[1])))));
        cases.push(case(nm("mul"), vec![a34.clone(), rhs.clone()], Box::new(move |t, v| f3(t, t.mul(v[0], v[1])))));
        cases.push(case(nm("div"), vec![a34.clone(), pos(&rhs)], Box::new(move |t, v| f4(t, t.div(v[0], v[1])))));
    }
    let (f1, f2) = (w!(), w!());
    cases.push(case("add/row+col", vec![row.clone(), col.clone()], Box::new(move |t, v| f1(t, t.add(v[0], v[1])))));
    cases.push(case("mul/col*row", vec![col.clone(), row.clone()], Box::new(move |t, v| f2(t, t.mul(v[0], v[1])))));

    type Unary = fn(&Tape, Var) -> Var;
    let unary: [(&'static str, Unary, bool); 8] = [
        ("affine", |t, x| t.affine(x, -1.7, 0.3), false),
        ("neg", |t, x| t.neg(x), false),
        ("one_minus", |t, x| t.one_minus(x), false),
        ("sigmoid", |t, x| t.sigmoid(x), false),
        ("tanh", |t, x| t.tanh(x), false),
        ("exp", |t, x| t.exp(x), false),
        ("log", |t, x| t.log(x), true),
        ("powf", |t, x| t.powf(x, 1.7), true),
    ];
    for (name, op, positive) in unary {
        let f = w!();
        let input = if positive { pos(&a34) } else { a34.clone() };
        cases.push(case(name, vec![input], Box::new(move |t, v| f(t, op(t, v[0])))));
    }

    let f = w!();
    cases.push(case(
        "concat_cols",
        vec![m(3, 2), m(3, 3)],
        Box::new(move |t, v| f(t, t.concat_cols(&[v[0], v[1]]))),
    ));
    let f = w!();
    cases.push(case(
        "concat_rows",
        vec![m(1, 4), m(2, 4)],
        Box::new(move |t, v| f(t, t.concat_rows(&[v[0], v[1]]))),
    ));
    let f = w!();
    cases.push(case("slice_cols", vec![m(3, 7)], Box::new(move |t, v| f(t, t.slice_cols(v[0], 2, 4)))));
    let f = w!();
    cases.push(case("slice_rows", vec![m(5, 4)], Box::new(move |t, v| f(t, t.slice_rows(v[0], 1, 3)))));
    let f = w!();
    // repeated indices accumulate
    let index = vec![0, 5, 5, 2, 9, 1, 0, 11, 3, 3, 7, 8];
    cases.push(case(
        "gather",
        vec![m(2, 6)],
        Box::new(move |t, v| f(t, t.gather(v[0], index.clone(), 3, 4))),
    ));
    let (f1, f2, f3) = (w!(), w!(), w!());
    cases.push(case("broadcast/row", vec![row.clone()], Box::new(move |t, v| f1(t, t.broadcast(v[0], 3, 4)))));
    cases.push(case("broadcast/col", vec![col.clone()], Box::new(move |t, v| f2(t, t.broadcast(v[0], 3, 4)))));
    cases.push(case("broadcast/scalar", vec![one.clone()], Box::new(move |t, v| f3(t, t.broadcast(v[0], 3, 4)))));
    cases.push(case("sum", vec![a34.clone()], Box::new(|t, v| t.sum(t.exp(v[0])))));
    cases.push(case("mean", vec![a34.clone()], Box::new(|t, v| t.mean(t.tanh(v[0])))));

    let f = w!();
    cases.push(case(
        "linear",
        vec![x2.clone(), w2.clone(), h2.clone(), u2.clone(), bias.clone()],
        Box::new(move |t, v| f(t, t.linear(&[(v[0], v[1]), (v[2], v[3])], Some(v[4])))),
    ));
    let f = w!();
    cases.push(case(
        "linear/no_bias",
        vec![x2, w2],
        Box::new(move |t, v| f(t, t.linear(&[(v[0], v[1])], None))),
    ));
    let f = w!();
    cases.push(case(
        "lstm_state",
        vec![z.clone(), c.clone()],
        Box::new(move |t, v| f(t, t.lstm_state(v[0], v[1]))),
    ));
    let f = w!();
    cases.push(case(
        "lstm_hidden",
        vec![z, c],
        Box::new(move |t, v| f(t, t.lstm_hidden(v[0], v[1]))),
    ));
    cases.push(case(
        "pinball",
        vec![pred.clone(), actual.clone()],
        Box::new(|t, v| t.pinball(v[0], v[1], 0.3, None).unwrap()),
    ));
    cases.push(case(
        "pinball/masked",
        vec![pred, actual],
        Box::new(move |t, v| t.pinball(v[0], v[1], 0.7, Some(&mask)).unwrap()),
    ));
    cases
}

/// `(name, worst relative error)` for every primitive.
pub fn primitive_errors(seed: u64) -> Vec<(&'static str, f64)> {
    primitive_cases(seed)
        .into_iter()
        .map(|c| (c.name, check_scalar_fn(&c.inputs, c.op.as_ref())))
        .collect()
}

/// LSTM cell: gradients of `sum(W1 ⊙ h) + sum(W2 ⊙ c)` w.r.t. input,
/// previous state and all weights.
pub fn lstm_cell_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n_in, h) = (3, 5, 4);
    let inputs = vec![
        random_matrix(&mut rng, b, n_in, -1.0, 1.0),
        random_matrix(&mut rng, b, h, -1.0, 1.0),
        random_matrix(&mut rng, b, h, -1.0, 1.0),
        random_matrix(&mut rng, n_in, 4 * h, -0.8, 0.8),
        random_matrix(&mut rng, h, 4 * h, -0.8, 0.8),
        random_matrix(&mut rng, 1, 4 * h, -0.5, 0.5),
    ];
    let w_h = random_matrix(&mut rng, b, h, -1.0, 1.0);
    let w_c = random_matrix(&mut rng, b, h, -1.0, 1.0);
    check_scalar_fn(&inputs, &move |t, v| {
        let w = LstmCellWeights {
            w_input: v[3],
            w_hidden: v[4],
            bias: v[5],
        };
        let (hn, cn) = lstm_cell(t, v[0], v[1], v[2], &w).unwrap();
        t.add(weighted_sum(t, hn, &w_h), weighted_sum(t, cn, &w_c))
    })
}

pub fn small_stack_config() -> StackConfig {
    StackConfig {
        dilations: vec![vec![1, 2], vec![2, 3]],
        hidden_size: 3,
        input_window: 5,
        horizon: 2,
        dense_size: 4,
    }
}

/// Full stack: gradients w.r.t. the window inputs and every weight.
pub fn stack_error(seed: u64) -> f64 {
    let cfg = small_stack_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = StackWeights::init(&cfg, &mut rng).unwrap();
    let batch = 3;
    let mut inputs = vec![Matrix::from_fn(batch, cfg.input_size(), |r, c| {
        if c < cfg.input_window {
            rng.random_range(0.7..1.3)
        } else if c - cfg.input_window == r {
            1.0
        } else {
            0.0
        }
    })];
    inputs.extend(weights.params.iter().map(|p| p.value.clone()));
    let out_w = random_matrix(&mut rng, batch, cfg.horizon, -1.0, 1.0);
    check_scalar_fn(&inputs, &move |t, v| {
        let sv = stack_vars_from(&cfg, &v[1..]);
        let y = forward_stack(t, v[0], &cfg, &sv).unwrap();
        weighted_sum(t, y, &out_w)
    })
}

/// Builds `StackVars` over existing leaves (store order) by recording a
/// throwaway weight set and swapping in the given handles.
pub fn stack_vars_from(cfg: &StackConfig, flat: &[Var]) -> esrnn_core::diff::StackVars {
    let scratch = Tape::new();
    let mut sv = StackWeights::zeros(cfg).unwrap().record(&scratch, false);
    let mut it = flat.iter().copied();
    for block in &mut sv.blocks {
        for cell in block {
            cell.w_input = it.next().unwrap();
            cell.w_hidden = it.next().unwrap();
            cell.bias = it.next().unwrap();
        }
    }
    sv.dense_w = it.next().unwrap();
    sv.dense_b = it.next().unwrap();
    sv.out_w = it.next().unwrap();
    sv.out_b = it.next().unwrap();
    assert!(it.next().is_none());
    sv.flat = flat.to_vec();
    sv
}

pub fn small_profile() -> FrequencyProfile {
    FrequencyProfile {
        frequency: Frequency::Quarterly,
        seasonality: 4,
        horizon: 3,
        input_window: 5,
        dilations: vec![vec![1, 2], vec![2]],
        hidden_size: 3,
        min_length: 16,
    }
}

pub fn small_set(count: usize, seed: u64) -> TrainingSet {
    let p = small_profile();
    let recs = seasonal_records(&SyntheticOptions::quarterly(count, p.equalized_len(), seed));
    TrainingSet::new(p, &recs).unwrap()
}

fn flat_series(p: &PerSeriesParams) -> Vec<f64> {
    let mut v = vec![p.alpha_raw, p.gamma_raw];
    v.extend_from_slice(&p.init_seasonality_raw);
    v
}

fn unflat_series(p: &mut PerSeriesParams, v: &[f64]) {
    p.alpha_raw = v[0];
    p.gamma_raw = v[1];
    p.init_seasonality_raw.copy_from_slice(&v[2..]);
}

/// Real-scale pinball of the planned windows: per-series parameters drive
/// the smoothing recursion, its levels and seasonality normalize the
/// inputs, the stack output is rescaled by level and target seasonality and
/// compared with the raw targets.
pub fn joint_loss(tape: &Tape, model: &Model, set: &TrainingSet, plan: &[WindowRef], tau: f64) -> (Var, Vec<Var>, esrnn_core::hw::TapePerSeriesParams, Vec<usize>) {
    let net = model.stack.record(tape, true);
    let w = windows_on_tape(tape, model, set, plan, true).unwrap();
    let pred = forward_stack(tape, w.inputs, model.stack_config(), &net).unwrap();
    let real = tape.mul(tape.mul(pred, w.levels), w.target_seasonality);
    let loss = tape.pinball(real, w.actuals, tau, None).unwrap();
    (loss, net.flat, w.per_series, w.touched)
}

/// Joint pipeline gradient check over every per-series value of the touched
/// series and every network weight. Returns `(per-series error, network
/// error, alpha_raw gradient of the first touched series)`.
pub fn joint_errors(seed: u64) -> (f64, f64, f64) {
    let set = small_set(3, seed);
    let model = Model::init(&set, seed).unwrap();
    let plan: Vec<WindowRef> = set.windows().into_iter().step_by(3).collect();
    let tau = 0.45;

    let tape = Tape::new();
    let (loss, net, per_series, touched) = joint_loss(&tape, &model, &set, &plan, tau);
    let grads = tape.backward(loss).unwrap();

    let eval = |m: &Model| {
        let t = Tape::new();
        let (l, ..) = joint_loss(&t, m, &set, &plan, tau);
        t.item(l)
    };

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let ga = grads.wrt(per_series.alpha_raw);
    let gg = grads.wrt(per_series.gamma_raw);
    let gs = grads.wrt(per_series.init_seasonality_raw);
    for (r, &s) in touched.iter().enumerate() {
        analytic.push(ga.get(r, 0));
        analytic.push(gg.get(r, 0));
        analytic.extend_from_slice(gs.row(r));
        let x = flat_series(&model.series[s].params);
        numeric.extend(central_diff(&x, FD_STEP, |probe| {
            let mut m = model.clone();
            unflat_series(&mut m.series[s].params, probe);
            eval(&m)
        }));
    }
    let series_err = rel_err(&analytic, &numeric);
    let alpha_grad = ga.get(0, 0);

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, &v) in net.iter().enumerate() {
        analytic.extend_from_slice(grads.wrt(v).as_slice());
        let x = model.stack.params.get(k).as_slice().to_vec();
        numeric.extend(central_diff(&x, FD_STEP, |probe| {
            let mut m = model.clone();
            m.stack.params.get_mut(k).as_mut_slice().copy_from_slice(probe);
            eval(&m)
        }));
    }
    (series_err, rel_err(&analytic, &numeric), alpha_grad)
}

/// Primer on the tape: levels and seasonality of random 30-point series
/// against the smoothing parameters.
pub fn primer_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, len, season) = (3, 30, 4);
    let values = Matrix::from_fn(n, len, |_, _| rng.random_range(5.0..15.0));
    let inputs = vec![
        random_matrix(&mut rng, n, 1, -1.0, 1.0),
        random_matrix(&mut rng, n, 1, -1.0, 1.0),
        random_matrix(&mut rng, n, season, -0.3, 0.3),
    ];
    let wl = random_matrix(&mut rng, n, len, -1.0, 1.0);
    let ws = random_matrix(&mut rng, n, len + season, -1.0, 1.0);
    check_scalar_fn(&inputs, &move |t, v| {
        let p = TapePerSeriesParams {
            alpha_raw: v[0],
            gamma_raw: v[1],
            init_seasonality_raw: v[2],
        };
        let s = primer_on_tape(t, &values, &p).unwrap();
        t.add(weighted_sum(t, s.levels, &wl), weighted_sum(t, s.seasonalities, &ws))
    })
}

/// Literal level/trend/seasonality recursion keyed by time index, seasonal
/// initials at `t = 1-S..=0`, then `ŷ_(T+k) = l_T · b_T^k · s_(T-S+k⁺)` with
/// `k⁺ = ((k-1) mod S) + 1`.
pub fn brute_force_hw(y: &[f64], p: &ClassicalHWParams, h: usize) -> Vec<f64> {
    let m = p.seasonality.len() as i64;
    let mut level = BTreeMap::new();
    let mut trend = BTreeMap::new();
    let mut seas = BTreeMap::new();
    level.insert(0i64, p.level0);
    trend.insert(0i64, p.trend0);
    for (i, s) in p.seasonality.iter().enumerate() {
        seas.insert(1 - m + i as i64, *s);
    }
    for t in 1..=y.len() as i64 {
        let yt = y[(t - 1) as usize];
        let (lp, bp, sp) = (level[&(t - 1)], trend[&(t - 1)], seas[&(t - m)]);
        let lt = p.alpha * yt / sp + (1.0 - p.alpha) * lp * bp;
        let bt = p.beta * lt / lp + (1.0 - p.beta) * bp;
        let st = p.gamma * yt / (lp * bp) + (1.0 - p.gamma) * sp;
        level.insert(t, lt);
        trend.insert(t, bt);
        seas.insert(t, st);
    }
    let n = y.len() as i64;
    (1..=h as i64)
        .map(|k| {
            let kp = (k - 1).rem_euclid(m) + 1;
            level[&n] * trend[&n].powf(k as f64) * seas[&(n - m + kp)]
        })
        .collect()
}

/// Random instance: length in `max(8, S)..=40`, S in {1, 4, 12},
/// coefficients in (0.05, 0.95), positive series around a drifting level.
pub fn random_hw_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, ClassicalHWParams, usize) {
    let season = [1usize, 4, 12][rng.random_range(0..3)];
    let len = rng.random_range(season.max(8)..=40);
    let h = rng.random_range(1..=2 * season.max(4));
    let base = rng.random_range(1.0..1000.0);
    let y: Vec<f64> = (0..len).map(|t| base * (1.0 + 0.01 * t as f64) * rng.random_range(0.7..1.3)).collect();
    let params = ClassicalHWParams {
        alpha: rng.random_range(0.05..0.95),
        beta: rng.random_range(0.05..0.95),
        gamma: rng.random_range(0.05..0.95),
        level0: base * rng.random_range(0.8..1.2),
        trend0: rng.random_range(0.97..1.03),
        seasonality: (0..season).map(|_| rng.random_range(0.6..1.4)).collect(),
    };
    (y, params, h)
}
