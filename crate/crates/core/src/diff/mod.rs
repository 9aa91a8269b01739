//! Differentiable computation and the dilated residual LSTM network.

mod lstm;
mod matrix;
mod params;
mod stack;
mod tape;

pub use lstm::{dilated_lstm_layer, lstm_cell, LstmCellWeights};
pub use matrix::Matrix;
pub use params::{NamedParam, ParamStore};
pub use stack::{
    forward_recurrent, forward_stack, unroll_windows, StackConfig, StackVars, StackWeights, FORGET_BIAS_INIT,
    STEP_INPUT_SIZE,
};
pub use tape::{pinball_term, Gradients, Tape, Var};
