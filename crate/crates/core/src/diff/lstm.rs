//! LSTM cell and the dilated recurrent layer.
//!
//! Gate layout inside the fused `4H` columns is `[input, forget, candidate, output]`.

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Tape handles of one LSTM layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellWeights {
    /// `input_size x 4H`
    pub w_input: Var,
    /// `H x 4H`
    pub w_hidden: Var,
    /// `1 x 4H`
    pub bias: Var,
}

impl LstmCellWeights {
    pub fn hidden_size(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_input.rows()
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        let ok = self.w_input.cols() == 4 * h && self.w_hidden.shape() == (h, 4 * h) && self.bias.shape() == (1, 4 * h);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "inconsistent LSTM weights: input {:?}, hidden {:?}, bias {:?}",
                self.w_input.shape(),
                self.w_hidden.shape(),
                self.bias.shape()
            )))
        }
    }
}

/// One LSTM step for a `batch x input` input.
///
/// i = σ(·), f = σ(·), g = tanh(·), o = σ(·); c = f⊙c_prev + i⊙g; h = o⊙tanh(c).
pub fn lstm_cell(tape: &Tape, x: Var, h_prev: Var, c_prev: Var, w: &LstmCellWeights) -> Result<(Var, Var)> {
    w.validate()?;
    let hs = w.hidden_size();
    let batch = x.rows();
    if x.cols() != w.input_size() {
        return Err(Error::Shape(format!(
            "LSTM input width {} but weights expect {}",
            x.cols(),
            w.input_size()
        )));
    }
    if h_prev.shape() != (batch, hs) || c_prev.shape() != (batch, hs) {
        return Err(Error::Shape(format!(
            "LSTM state shapes {:?}/{:?}, expected ({batch}, {hs})",
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    let z = tape.linear(&[(x, w.w_input), (h_prev, w.w_hidden)], Some(w.bias));
    let c = tape.lstm_state(z, c_prev);
    let h = tape.lstm_hidden(z, c);
    Ok((h, c))
}

/// Unrolls an LSTM over `inputs` where step `t` takes its recurrent state
/// (both h and c) from step `t - dilation`, or zeros when `t < dilation`.
pub fn dilated_lstm_layer(tape: &Tape, inputs: &[Var], dilation: usize, w: &LstmCellWeights) -> Result<Vec<Var>> {
    if dilation < 1 {
        return Err(Error::Config("dilation must be >= 1".into()));
    }
    let Some(first) = inputs.first() else {
        return Ok(Vec::new());
    };
    let zeros = tape.constant(Matrix::zeros(first.rows(), w.hidden_size()));
    let mut hs: Vec<Var> = Vec::with_capacity(inputs.len());
    let mut cs: Vec<Var> = Vec::with_capacity(inputs.len());
    for (t, &x) in inputs.iter().enumerate() {
        let (h_prev, c_prev) = if t >= dilation {
            (hs[t - dilation], cs[t - dilation])
        } else {
            (zeros, zeros)
        };
        let (h, c) = lstm_cell(tape, x, h_prev, c_prev, w)?;
        hs.push(h);
        cs.push(c);
    }
    Ok(hs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(tape: &Tape, input: usize, hidden: usize, fill: f64) -> LstmCellWeights {
        LstmCellWeights {
            w_input: tape.leaf(Matrix::full(input, 4 * hidden, fill)),
            w_hidden: tape.leaf(Matrix::full(hidden, 4 * hidden, fill)),
            bias: tape.leaf(Matrix::zeros(1, 4 * hidden)),
        }
    }

    #[test]
    fn zero_weights_halve_cell() {
        let t = Tape::new();
        let w = weights(&t, 3, 2, 0.0);
        let x = t.constant(Matrix::full(1, 3, 0.7));
        let h0 = t.constant(Matrix::zeros(1, 2));
        let c0 = t.constant(Matrix::row_vector(&[0.8, -2.0]));
        let (h, c) = lstm_cell(&t, x, h0, c0, &w).unwrap();
        let c = t.value(c);
        let h = t.value(h);
        for (k, cp) in [0.8f64, -2.0].into_iter().enumerate() {
            assert!((c.get(0, k) - 0.5 * cp).abs() < 1e-15);
            assert!((h.get(0, k) - 0.5 * (0.5 * cp).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_zero_weights_gives_zero_h() {
        let t = Tape::new();
        let w = weights(&t, 3, 2, 0.0);
        let x = t.constant(Matrix::full(2, 3, 1.3));
        let z = t.constant(Matrix::zeros(2, 2));
        let (h, _) = lstm_cell(&t, x, z, z, &w).unwrap();
        assert_eq!(t.value(h), Matrix::zeros(2, 2));
    }

    #[test]
    fn shape_errors() {
        let t = Tape::new();
        let w = weights(&t, 3, 2, 0.1);
        let x = t.constant(Matrix::zeros(1, 4));
        let z = t.constant(Matrix::zeros(1, 2));
        assert!(matches!(lstm_cell(&t, x, z, z, &w), Err(Error::Shape(_))));
        assert!(matches!(dilated_lstm_layer(&t, &[x], 0, &w), Err(Error::Config(_))));
    }

    #[test]
    fn dilation_one_is_standard_unroll() {
        let t = Tape::new();
        let w = LstmCellWeights {
            w_input: t.leaf(Matrix::from_fn(2, 12, |r, c| ((r * 12 + c) as f64 * 0.37).sin() * 0.5)),
            w_hidden: t.leaf(Matrix::from_fn(3, 12, |r, c| ((r * 12 + c) as f64 * 0.11).cos() * 0.5)),
            bias: t.leaf(Matrix::from_fn(1, 12, |_, c| c as f64 * 0.01)),
        };
        let xs: Vec<Var> = (0..5).map(|k| t.constant(Matrix::row_vector(&[k as f64 * 0.2, 1.0 - k as f64 * 0.1]))).collect();
        let out = dilated_lstm_layer(&t, &xs, 1, &w).unwrap();
        let z = t.constant(Matrix::zeros(1, 3));
        let (mut h, mut c) = (z, z);
        for (k, &x) in xs.iter().enumerate() {
            (h, c) = lstm_cell(&t, x, h, c, &w).unwrap();
            assert_eq!(t.value(h), t.value(out[k]));
        }
    }
}
