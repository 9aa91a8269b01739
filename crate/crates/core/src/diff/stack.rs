//! Residual stack of dilated LSTM blocks with a tanh layer and a linear adapter.
//!
//! A window row `[x_1 .. x_I, onehot(6)]` is unrolled into an `I`-step
//! sequence whose step `j` input is `[x_j, onehot]`. Blocks run in order;
//! every block after the first adds its input sequence to its output
//! (identity skip). The last block's hidden state at the final step goes
//! through `tanh(h·W + b)` and then a linear layer to the `O` outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{dilated_lstm_layer, LstmCellWeights};
use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::data::{FrequencyProfile, NUM_CATEGORIES};
use crate::error::{Error, Result};

/// Width of one unrolled step: the window value plus the category one-hot.
pub const STEP_INPUT_SIZE: usize = 1 + NUM_CATEGORIES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub dilations: Vec<Vec<usize>>,
    pub hidden_size: usize,
    /// Input window length I; rows fed to the stack are `I + 6` wide.
    pub input_window: usize,
    /// Output width O.
    pub horizon: usize,
    /// Width of the tanh layer.
    pub dense_size: usize,
}

impl StackConfig {
    pub fn from_profile(p: &FrequencyProfile) -> Self {
        StackConfig {
            dilations: p.dilations.clone(),
            hidden_size: p.hidden_size,
            input_window: p.input_window,
            horizon: p.horizon,
            dense_size: p.hidden_size,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_window + NUM_CATEGORIES
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() || self.dilations.iter().any(Vec::is_empty) {
            return Err(Error::Config("stack needs at least one non-empty dilation block".into()));
        }
        if self.dilations.iter().flatten().any(|&d| d == 0) {
            return Err(Error::Config("dilations must be >= 1".into()));
        }
        if self.hidden_size == 0 || self.input_window == 0 || self.horizon == 0 || self.dense_size == 0 {
            return Err(Error::Config("stack sizes must be positive".into()));
        }
        Ok(())
    }

    fn layer_count(&self) -> usize {
        self.dilations.iter().map(Vec::len).sum()
    }
}

/// Owned network weights, stored as named parameters:
/// `block{b}.layer{k}.{w_input,w_hidden,bias}`, `dense.{w,b}`, `output.{w,b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackWeights {
    pub config: StackConfig,
    pub params: ParamStore,
}

/// Forget-gate bias at initialisation.
pub const FORGET_BIAS_INIT: f64 = 1.0;

impl StackWeights {
    /// Uniform(±1/√H) matrices, zero biases except forget gates.
    pub fn init<R: Rng + ?Sized>(config: &StackConfig, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (config.hidden_size as f64).sqrt();
        Self::build(
            config,
            |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound)),
            FORGET_BIAS_INIT,
        )
    }

    /// Same layout with every value zero.
    pub fn zeros(config: &StackConfig) -> Result<Self> {
        Self::build(config, Matrix::zeros, 0.0)
    }

    fn build(config: &StackConfig, mut matrix: impl FnMut(usize, usize) -> Matrix, forget_bias: f64) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let mut params = ParamStore::new();
        let mut input = STEP_INPUT_SIZE;
        for (b, block) in config.dilations.iter().enumerate() {
            for k in 0..block.len() {
                let prefix = format!("block{b}.layer{k}");
                params.push(format!("{prefix}.w_input"), matrix(input, 4 * h));
                params.push(format!("{prefix}.w_hidden"), matrix(h, 4 * h));
                let mut bias = Matrix::zeros(1, 4 * h);
                for j in h..2 * h {
                    bias.set(0, j, forget_bias);
                }
                params.push(format!("{prefix}.bias"), bias);
                input = h;
            }
        }
        params.push("dense.w", matrix(h, config.dense_size));
        params.push("dense.b", Matrix::zeros(1, config.dense_size));
        params.push("output.w", matrix(config.dense_size, config.horizon));
        params.push("output.b", Matrix::zeros(1, config.horizon));
        Ok(StackWeights {
            config: config.clone(),
            params,
        })
    }

    /// Checks that the stored matrices match `config`'s layout.
    pub fn check_layout(&self) -> Result<()> {
        let expected = StackWeights::zeros(&self.config)?;
        let same = expected.params.len() == self.params.len()
            && expected
                .params
                .iter()
                .zip(self.params.iter())
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if same {
            Ok(())
        } else {
            Err(Error::CheckpointIncompatible("network parameter layout does not match config".into()))
        }
    }

    /// Records the weights on `tape`.
    pub fn record(&self, tape: &Tape, trainable: bool) -> StackVars {
        let vars = self.params.record(tape, trainable);
        StackVars::from_flat(&self.config, vars)
    }
}

/// Tape handles of a [`StackWeights`], grouped by role.
#[derive(Debug, Clone)]
pub struct StackVars {
    /// One entry per block, one cell per layer.
    pub blocks: Vec<Vec<LstmCellWeights>>,
    pub dense_w: Var,
    pub dense_b: Var,
    pub out_w: Var,
    pub out_b: Var,
    /// All handles in parameter-store order.
    pub flat: Vec<Var>,
}

impl StackVars {
    fn from_flat(config: &StackConfig, flat: Vec<Var>) -> Self {
        assert_eq!(flat.len(), 3 * config.layer_count() + 4);
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("layout checked above");
        let blocks = config
            .dilations
            .iter()
            .map(|block| {
                block
                    .iter()
                    .map(|_| LstmCellWeights {
                        w_input: next(),
                        w_hidden: next(),
                        bias: next(),
                    })
                    .collect()
            })
            .collect();
        let (dense_w, dense_b, out_w, out_b) = (next(), next(), next(), next());
        StackVars {
            blocks,
            dense_w,
            dense_b,
            out_w,
            out_b,
            flat,
        }
    }
}

/// Splits window rows into the per-step `[x_j, onehot]` inputs.
pub fn unroll_windows(tape: &Tape, inputs: Var, config: &StackConfig) -> Result<Vec<Var>> {
    if inputs.cols() != config.input_size() {
        return Err(Error::Shape(format!(
            "stack input width {} but config expects I + 6 = {}",
            inputs.cols(),
            config.input_size()
        )));
    }
    let onehot = tape.slice_cols(inputs, config.input_window, NUM_CATEGORIES);
    Ok((0..config.input_window)
        .map(|j| tape.concat_cols(&[tape.slice_cols(inputs, j, 1), onehot]))
        .collect())
}

/// Runs the block sequence and returns the final step of the last block.
pub fn forward_recurrent(tape: &Tape, steps: Vec<Var>, config: &StackConfig, vars: &StackVars) -> Result<Var> {
    config.validate()?;
    if vars.blocks.len() != config.dilations.len() {
        return Err(Error::Config("weights do not match the dilation blocks".into()));
    }
    let mut seq = steps;
    for (b, (block, cells)) in config.dilations.iter().zip(&vars.blocks).enumerate() {
        if block.len() != cells.len() {
            return Err(Error::Config(format!("block {b}: weights do not match dilations")));
        }
        let block_input = seq.clone();
        for (&d, w) in block.iter().zip(cells) {
            seq = dilated_lstm_layer(tape, &seq, d, w)?;
        }
        if b > 0 {
            seq = seq.iter().zip(&block_input).map(|(&o, &i)| tape.add(o, i)).collect();
        }
    }
    seq.last().copied().ok_or_else(|| Error::Shape("empty input sequence".into()))
}

/// Full network: window rows `batch x (I+6)` to normalized forecasts `batch x O`.
pub fn forward_stack(tape: &Tape, inputs: Var, config: &StackConfig, vars: &StackVars) -> Result<Var> {
    let steps = unroll_windows(tape, inputs, config)?;
    let last = forward_recurrent(tape, steps, config, vars)?;
    let dense = tape.tanh(tape.add(tape.matmul(last, vars.dense_w), vars.dense_b));
    Ok(tape.add(tape.matmul(dense, vars.out_w), vars.out_b))
}
