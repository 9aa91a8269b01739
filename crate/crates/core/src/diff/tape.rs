//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation on a [`Tape`] evaluates eagerly and appends a node holding
//! its value and the indices of its inputs. [`Tape::backward`] then walks the
//! nodes in reverse creation order (a valid reverse topological order, since
//! inputs always precede outputs) and accumulates adjoints. Contributions from
//! fan-out add.
//!
//! Shape mismatches in the primitive operations are programming errors and
//! panic; the model-level functions built on top validate shapes first and
//! return [`Error::Shape`](crate::Error::Shape).
//!
//! Binary elementwise operations broadcast: each operand dimension must equal
//! the output dimension or be 1 (row vectors, column vectors and scalars).

use std::cell::RefCell;

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn index(&self) -> usize {
        self.idx
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Affine { x: usize, scale: f64 },
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Powf { x: usize, p: f64 },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    Gather { x: usize, index: Vec<usize> },
    Broadcast(usize),
    Sum(usize),
    Mean(usize),
    Linear {
        terms: Vec<(usize, usize)>,
        bias: Option<usize>,
    },
    /// `gates` caches the i, f, g activations (`batch x 3H`).
    LstmState {
        z: usize,
        c_prev: usize,
        gates: Matrix,
    },
    /// `cache` holds o and tanh(c) (`batch x 2H`).
    LstmHidden {
        z: usize,
        c: usize,
        cache: Matrix,
    },
    Pinball {
        pred: usize,
        actual: usize,
        tau: f64,
        mask: Option<Vec<f64>>,
        count: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints produced by [`Tape::backward`]. Only leaves and constants keep
/// theirs; intermediate adjoints are freed once propagated.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of leaf `v`, or `None` when it does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Adjoint of `v`; zeros when unreachable.
    pub fn wrt(&self, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(v.rows, v.cols))
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible broadcast shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

/// Applies `f` elementwise with broadcasting.
fn zip_broadcast(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == b.shape() {
        let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        return Matrix::from_vec(a.rows(), a.cols(), data);
    }
    let (r, c) = broadcast_shape(a.shape(), b.shape());
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let ar = a.row(if a.rows() == 1 { 0 } else { i });
        let br = b.row(if b.rows() == 1 { 0 } else { i });
        match (ar.len() == c, br.len() == c) {
            (true, true) => out.extend(ar.iter().zip(br).map(|(&x, &y)| f(x, y))),
            (true, false) => out.extend(ar.iter().map(|&x| f(x, br[0]))),
            (false, true) => out.extend(br.iter().map(|&y| f(ar[0], y))),
            (false, false) => out.extend(std::iter::repeat_n(f(ar[0], br[0]), c)),
        }
    }
    Matrix::from_vec(r, c, out)
}

/// Reads `m` as if broadcast to `(rows, cols)`.
fn expand(m: &Matrix, rows: usize, cols: usize) -> Matrix {
    if m.shape() == (rows, cols) {
        return m.clone();
    }
    zip_broadcast(m, &Matrix::zeros(rows, cols), |x, _| x)
}

/// Sums a broadcast gradient back down to `(rows, cols)`.
fn reduce_to(g: Matrix, rows: usize, cols: usize) -> Matrix {
    if g.shape() == (rows, cols) {
        return g;
    }
    let mut out = Matrix::zeros(rows, cols);
    let dst = out.as_mut_slice();
    for i in 0..g.rows() {
        let src = g.row(i);
        match (rows == 1, cols == 1) {
            (true, false) => dst.iter_mut().zip(src).for_each(|(d, v)| *d += v),
            (false, true) => src.iter().for_each(|v| dst[i] += v),
            (true, true) => src.iter().for_each(|v| dst[0] += v),
            (false, false) => dst[i * cols..(i + 1) * cols].iter_mut().zip(src).for_each(|(d, v)| *d += v),
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let (rows, cols) = value.shape();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            idx: nodes.len() - 1,
            rows,
            cols,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Matrix {
        self.nodes.borrow()[v.idx].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.nodes.borrow()[v.idx].value)
    }

    /// Value of a 1x1 var.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.idx].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.idx].requires_grad
    }

    fn unary(&self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.with_value(x, |m| m.map(f));
        let rg = self.needs(&[x.idx]);
        self.push(value, op, rg)
    }

    fn binary(&self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            zip_broadcast(&nodes[a.idx].value, &nodes[b.idx].value, f)
        };
        let rg = self.needs(&[a.idx, b.idx]);
        self.push(value, op, rg)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        assert_eq!(a.cols, b.rows, "matmul shapes {:?} x {:?}", a.shape(), b.shape());
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.idx].value.matmul(&nodes[b.idx].value)
        };
        let rg = self.needs(&[a.idx, b.idx]);
        self.push(value, Op::MatMul(a.idx, b.idx), rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a.idx, b.idx), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a.idx, b.idx), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a.idx, b.idx), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a.idx, b.idx), |x, y| x / y)
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine { x: x.idx, scale }, |v| scale * v + shift)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x.idx), sigmoid)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x.idx), f64::tanh)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, Op::Exp(x.idx), f64::exp)
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, Op::Log(x.idx), f64::ln)
    }

    pub fn powf(&self, x: Var, p: f64) -> Var {
        self.unary(x, Op::Powf { x: x.idx, p }, |v| v.powf(p))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = parts[0].rows;
        assert!(parts.iter().all(|p| p.rows == rows), "concat_cols row mismatch");
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    out.extend_from_slice(nodes[p.idx].value.row(r));
                }
            }
            Matrix::from_vec(rows, cols, out)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        let rg = self.needs(&ids);
        self.push(value, Op::ConcatCols(ids), rg)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = parts[0].cols;
        assert!(parts.iter().all(|p| p.cols == cols), "concat_rows column mismatch");
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = Vec::with_capacity(rows * cols);
            for p in parts {
                out.extend_from_slice(nodes[p.idx].value.as_slice());
            }
            Matrix::from_vec(rows, cols, out)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.idx).collect();
        let rg = self.needs(&ids);
        self.push(value, Op::ConcatRows(ids), rg)
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= x.cols, "slice_cols out of range");
        let value = self.with_value(x, |m| {
            let mut out = Vec::with_capacity(m.rows() * len);
            for r in 0..m.rows() {
                out.extend_from_slice(&m.row(r)[start..start + len]);
            }
            Matrix::from_vec(m.rows(), len, out)
        });
        let rg = self.needs(&[x.idx]);
        self.push(value, Op::SliceCols { x: x.idx, start }, rg)
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= x.rows, "slice_rows out of range");
        let value = self.with_value(x, |m| {
            Matrix::from_vec(len, m.cols(), m.as_slice()[start * m.cols()..(start + len) * m.cols()].to_vec())
        });
        let rg = self.needs(&[x.idx]);
        self.push(value, Op::SliceRows { x: x.idx, start }, rg)
    }

    /// `out[k] = x.flat[index[k]]`, shaped `rows x cols`.
    pub fn gather(&self, x: Var, index: Vec<usize>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length");
        let value = self.with_value(x, |m| {
            let src = m.as_slice();
            Matrix::from_vec(rows, cols, index.iter().map(|&i| src[i]).collect())
        });
        let rg = self.needs(&[x.idx]);
        self.push(value, Op::Gather { x: x.idx, index }, rg)
    }

    /// Broadcasts a row vector, column vector or scalar to `rows x cols`.
    pub fn broadcast(&self, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(broadcast_shape((rows, cols), x.shape()), (rows, cols), "bad broadcast target");
        let value = self.with_value(x, |m| expand(m, rows, cols));
        let rg = self.needs(&[x.idx]);
        self.push(value, Op::Broadcast(x.idx), rg)
    }

    pub fn sum(&self, x: Var) -> Var {
        let value = self.with_value(x, |m| Matrix::scalar(m.sum()));
        let rg = self.needs(&[x.idx]);
        self.push(value, Op::Sum(x.idx), rg)
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = (x.rows * x.cols) as f64;
        let value = self.with_value(x, |m| Matrix::scalar(m.sum() / n));
        let rg = self.needs(&[x.idx]);
        self.push(value, Op::Mean(x.idx), rg)
    }

    /// `Σ x_k · W_k + bias` with the bias row broadcast over rows.
    pub fn linear(&self, terms: &[(Var, Var)], bias: Option<Var>) -> Var {
        assert!(!terms.is_empty(), "linear needs at least one term");
        let (m, n) = (terms[0].0.rows, terms[0].1.cols);
        for (x, w) in terms {
            assert!(x.rows == m && w.cols == n && x.cols == w.rows, "linear term {:?} x {:?}", x.shape(), w.shape());
        }
        if let Some(b) = bias {
            assert_eq!(b.shape(), (1, n), "linear bias shape");
        }
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = match bias {
                Some(b) => {
                    let row = nodes[b.idx].value.as_slice();
                    let mut v = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        v.extend_from_slice(row);
                    }
                    v
                }
                None => vec![0.0; m * n],
            };
            for (x, w) in terms {
                let (xv, wv) = (&nodes[x.idx].value, &nodes[w.idx].value);
                gemm(&mut out, m, n, x.cols, (xv.as_slice(), false), (wv.as_slice(), false), true);
            }
            Matrix::from_vec(m, n, out)
        };
        let mut ids: Vec<usize> = terms.iter().flat_map(|(x, w)| [x.idx, w.idx]).collect();
        ids.extend(bias.map(|b| b.idx));
        let rg = self.needs(&ids);
        let op = Op::Linear {
            terms: terms.iter().map(|(x, w)| (x.idx, w.idx)).collect(),
            bias: bias.map(|b| b.idx),
        };
        self.push(value, op, rg)
    }

    /// LSTM cell state from gate pre-activations `z` (`batch x 4H`, gate
    /// order i, f, g, o): `c = σ(z_f) ⊙ c_prev + σ(z_i) ⊙ tanh(z_g)`.
    pub fn lstm_state(&self, z: Var, c_prev: Var) -> Var {
        let h = c_prev.cols;
        assert_eq!(z.shape(), (c_prev.rows, 4 * h), "lstm_state shapes");
        let (value, gates) = {
            let nodes = self.nodes.borrow();
            let (zv, cv) = (&nodes[z.idx].value, &nodes[c_prev.idx].value);
            let mut gates = Vec::with_capacity(z.rows * 3 * h);
            let mut c = Vec::with_capacity(z.rows * h);
            for r in 0..z.rows {
                let zr = zv.row(r);
                let start = gates.len();
                gates.extend(zr[..2 * h].iter().map(|&v| sigmoid(v)));
                gates.extend(zr[2 * h..3 * h].iter().map(|&v| v.tanh()));
                let g = &gates[start..];
                c.extend((0..h).map(|k| g[h + k] * cv.row(r)[k] + g[k] * g[2 * h + k]));
            }
            (Matrix::from_vec(z.rows, h, c), Matrix::from_vec(z.rows, 3 * h, gates))
        };
        let rg = self.needs(&[z.idx, c_prev.idx]);
        self.push(
            value,
            Op::LstmState {
                z: z.idx,
                c_prev: c_prev.idx,
                gates,
            },
            rg,
        )
    }

    /// LSTM hidden output `h = σ(z_o) ⊙ tanh(c)`.
    pub fn lstm_hidden(&self, z: Var, c: Var) -> Var {
        let h = c.cols;
        assert_eq!(z.shape(), (c.rows, 4 * h), "lstm_hidden shapes");
        let (value, cache) = {
            let nodes = self.nodes.borrow();
            let (zv, cv) = (&nodes[z.idx].value, &nodes[c.idx].value);
            let mut cache = Vec::with_capacity(z.rows * 2 * h);
            let mut out = Vec::with_capacity(z.rows * h);
            for r in 0..z.rows {
                let start = cache.len();
                cache.extend(zv.row(r)[3 * h..].iter().map(|&v| sigmoid(v)));
                cache.extend(cv.row(r).iter().map(|&v| v.tanh()));
                let cr = &cache[start..];
                out.extend((0..h).map(|k| cr[k] * cr[h + k]));
            }
            (Matrix::from_vec(z.rows, h, out), Matrix::from_vec(z.rows, 2 * h, cache))
        };
        let rg = self.needs(&[z.idx, c.idx]);
        self.push(value, Op::LstmHidden { z: z.idx, c: c.idx, cache }, rg)
    }

    /// Masked-mean pinball loss. Per element with residual `actual - pred`:
    /// `tau * r` when `r >= 0`, `(tau - 1) * r` otherwise. Entries with mask 0
    /// contribute nothing to the value and exactly zero adjoint.
    pub fn pinball(&self, pred: Var, actual: Var, tau: f64, mask: Option<&Matrix>) -> Result<Var> {
        if pred.shape() != actual.shape() {
            return Err(Error::Shape(format!(
                "pinball predicted {:?} vs actual {:?}",
                pred.shape(),
                actual.shape()
            )));
        }
        if let Some(m) = mask {
            if m.shape() != pred.shape() {
                return Err(Error::Shape(format!("pinball mask {:?} vs {:?}", m.shape(), pred.shape())));
            }
        }
        let mask = mask.map(|m| m.as_slice().to_vec());
        let count = match &mask {
            Some(m) => m.iter().filter(|&&w| w != 0.0).count(),
            None => pred.rows * pred.cols,
        };
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        let count = count as f64;
        let value = {
            let nodes = self.nodes.borrow();
            let p = nodes[pred.idx].value.as_slice();
            let a = nodes[actual.idx].value.as_slice();
            let mut total = 0.0;
            for k in 0..p.len() {
                if mask.as_ref().is_some_and(|m| m[k] == 0.0) {
                    continue;
                }
                total += pinball_term(a[k], p[k], tau);
            }
            Matrix::scalar(total / count)
        };
        let rg = self.needs(&[pred.idx, actual.idx]);
        Ok(self.push(
            value,
            Op::Pinball {
                pred: pred.idx,
                actual: actual.idx,
                tau,
                mask,
                count,
            },
            rg,
        ))
    }

    /// Reverse pass from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: loss.rows,
                cols: loss.cols,
            });
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(nodes.len(), || None);
        if !nodes[loss.idx].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.idx] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let acc = |j: usize, contrib: Matrix, grads: &mut Vec<Option<Matrix>>| {
                if !nodes[j].requires_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |j: usize| &nodes[j].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if nodes[*a].requires_grad {
                        let mut ga = vec![0.0; m * k];
                        gemm(&mut ga, m, k, n, (g.as_slice(), false), (bv.as_slice(), true), false);
                        acc(*a, Matrix::from_vec(m, k, ga), &mut grads);
                    }
                    if nodes[*b].requires_grad {
                        let mut gb = vec![0.0; k * n];
                        gemm(&mut gb, k, n, m, (av.as_slice(), true), (g.as_slice(), false), false);
                        acc(*b, Matrix::from_vec(k, n, gb), &mut grads);
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if nodes[*a].requires_grad {
                        let (r, c) = val(*a).shape();
                        acc(*a, reduce_to(g.clone(), r, c), &mut grads);
                    }
                    if nodes[*b].requires_grad {
                        let (r, c) = val(*b).shape();
                        let mut gb = reduce_to(g.clone(), r, c);
                        if sign < 0.0 {
                            gb.scale_assign(-1.0);
                        }
                        acc(*b, gb, &mut grads);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[*a].requires_grad {
                        let ga = zip_broadcast(&g, bv, |x, y| x * y);
                        acc(*a, reduce_to(ga, av.rows(), av.cols()), &mut grads);
                    }
                    if nodes[*b].requires_grad {
                        let gb = zip_broadcast(&g, av, |x, y| x * y);
                        acc(*b, reduce_to(gb, bv.rows(), bv.cols()), &mut grads);
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[*a].requires_grad {
                        let ga = zip_broadcast(&g, bv, |x, y| x / y);
                        acc(*a, reduce_to(ga, av.rows(), av.cols()), &mut grads);
                    }
                    if nodes[*b].requires_grad {
                        // d(a/b)/db = -out / b
                        let gb = zip_broadcast(&zip_broadcast(&g, &node.value, |gg, o| -gg * o), bv, |t, bb| t / bb);
                        acc(*b, reduce_to(gb, bv.rows(), bv.cols()), &mut grads);
                    }
                }
                Op::Affine { x, scale } => {
                    let mut gx = g.clone();
                    gx.scale_assign(*scale);
                    acc(*x, gx, &mut grads);
                }
                Op::Sigmoid(x) => {
                    let gx = zip_broadcast(&g, &node.value, |gg, y| gg * y * (1.0 - y));
                    acc(*x, gx, &mut grads);
                }
                Op::Tanh(x) => {
                    let gx = zip_broadcast(&g, &node.value, |gg, y| gg * (1.0 - y * y));
                    acc(*x, gx, &mut grads);
                }
                Op::Exp(x) => {
                    let gx = zip_broadcast(&g, &node.value, |gg, y| gg * y);
                    acc(*x, gx, &mut grads);
                }
                Op::Log(x) => {
                    let gx = zip_broadcast(&g, val(*x), |gg, v| gg / v);
                    acc(*x, gx, &mut grads);
                }
                Op::Powf { x, p } => {
                    let p = *p;
                    let gx = zip_broadcast(&g, val(*x), |gg, v| gg * p * v.powf(p - 1.0));
                    acc(*x, gx, &mut grads);
                }
                Op::ConcatCols(ids) => {
                    let mut offset = 0;
                    for &j in ids {
                        let w = val(j).cols();
                        if nodes[j].requires_grad {
                            let mut part = Vec::with_capacity(g.rows() * w);
                            for r in 0..g.rows() {
                                part.extend_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            let part = Matrix::from_vec(g.rows(), w, part);
                            acc(j, part, &mut grads);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(ids) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &j in ids {
                        let h = val(j).rows();
                        if nodes[j].requires_grad {
                            let part = g.as_slice()[offset * cols..(offset + h) * cols].to_vec();
                            acc(j, Matrix::from_vec(h, cols, part), &mut grads);
                        }
                        offset += h;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    let w = g.cols();
                    for i in 0..g.rows() {
                        gx.as_mut_slice()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                    }
                    acc(*x, gx, &mut grads);
                }
                Op::SliceRows { x, start } => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    gx.as_mut_slice()[start * c..(start + g.rows()) * c].copy_from_slice(g.as_slice());
                    acc(*x, gx, &mut grads);
                }
                Op::Gather { x, index } => {
                    let (r, c) = val(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    let dst = gx.as_mut_slice();
                    for (k, &src) in index.iter().enumerate() {
                        dst[src] += g.as_slice()[k];
                    }
                    acc(*x, gx, &mut grads);
                }
                Op::Broadcast(x) => {
                    let (r, c) = val(*x).shape();
                    acc(*x, reduce_to(g.clone(), r, c), &mut grads);
                }
                Op::Sum(x) => {
                    let (r, c) = val(*x).shape();
                    acc(*x, Matrix::full(r, c, g.item()), &mut grads);
                }
                Op::Mean(x) => {
                    let (r, c) = val(*x).shape();
                    acc(*x, Matrix::full(r, c, g.item() / (r * c) as f64), &mut grads);
                }
                Op::Linear { terms, bias } => {
                    let (m, n) = g.shape();
                    for &(x, w) in terms {
                        let (xv, wv) = (val(x), val(w));
                        let k = xv.cols();
                        if nodes[x].requires_grad {
                            let mut gx = vec![0.0; m * k];
                            gemm(&mut gx, m, k, n, (g.as_slice(), false), (wv.as_slice(), true), false);
                            acc(x, Matrix::from_vec(m, k, gx), &mut grads);
                        }
                        if nodes[w].requires_grad {
                            let mut gw = vec![0.0; k * n];
                            gemm(&mut gw, k, n, m, (xv.as_slice(), true), (g.as_slice(), false), false);
                            acc(w, Matrix::from_vec(k, n, gw), &mut grads);
                        }
                    }
                    if let Some(b) = *bias {
                        acc(b, reduce_to(g.clone(), 1, n), &mut grads);
                    }
                }
                Op::LstmState { z, c_prev, gates } => {
                    let h = g.cols();
                    let cv = val(*c_prev);
                    if nodes[*z].requires_grad {
                        let mut gz = Matrix::zeros(g.rows(), 4 * h);
                        for r in 0..g.rows() {
                            let (gr, gt, cp) = (g.row(r), gates.row(r), cv.row(r));
                            let dst = &mut gz.as_mut_slice()[r * 4 * h..r * 4 * h + 3 * h];
                            for k in 0..h {
                                let (i, f, gg) = (gt[k], gt[h + k], gt[2 * h + k]);
                                dst[k] = gr[k] * gg * i * (1.0 - i);
                                dst[h + k] = gr[k] * cp[k] * f * (1.0 - f);
                                dst[2 * h + k] = gr[k] * i * (1.0 - gg * gg);
                            }
                        }
                        acc(*z, gz, &mut grads);
                    }
                    if nodes[*c_prev].requires_grad {
                        let gc = Matrix::from_fn(g.rows(), h, |r, k| g.get(r, k) * gates.get(r, h + k));
                        acc(*c_prev, gc, &mut grads);
                    }
                }
                Op::LstmHidden { z, c, cache } => {
                    let h = g.cols();
                    if nodes[*z].requires_grad {
                        let mut gz = Matrix::zeros(g.rows(), 4 * h);
                        for r in 0..g.rows() {
                            let (gr, cr) = (g.row(r), cache.row(r));
                            let dst = &mut gz.as_mut_slice()[r * 4 * h + 3 * h..(r + 1) * 4 * h];
                            for k in 0..h {
                                let o = cr[k];
                                dst[k] = gr[k] * cr[h + k] * o * (1.0 - o);
                            }
                        }
                        acc(*z, gz, &mut grads);
                    }
                    if nodes[*c].requires_grad {
                        let gc = Matrix::from_fn(g.rows(), h, |r, k| {
                            let (o, t) = (cache.get(r, k), cache.get(r, h + k));
                            g.get(r, k) * o * (1.0 - t * t)
                        });
                        acc(*c, gc, &mut grads);
                    }
                }
                Op::Pinball {
                    pred,
                    actual,
                    tau,
                    mask,
                    count,
                } => {
                    let (pv, av) = (val(*pred), val(*actual));
                    let scale = g.item() / count;
                    let dpred: Vec<f64> = (0..pv.len())
                        .map(|k| {
                            if mask.as_ref().is_some_and(|m| m[k] == 0.0) {
                                0.0
                            } else {
                                let slope = if av.as_slice()[k] >= pv.as_slice()[k] { -tau } else { 1.0 - tau };
                                slope * scale
                            }
                        })
                        .collect();
                    let (r, c) = pv.shape();
                    if nodes[*actual].requires_grad {
                        let dact = dpred.iter().map(|d| if *d == 0.0 { 0.0 } else { -d }).collect();
                        acc(*actual, Matrix::from_vec(r, c, dact), &mut grads);
                    }
                    acc(*pred, Matrix::from_vec(r, c, dpred), &mut grads);
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// One pinball term for `actual` vs `pred` at quantile `tau`.
pub fn pinball_term(actual: f64, pred: f64, tau: f64) -> f64 {
    if actual >= pred {
        tau * (actual - pred)
    } else {
        (1.0 - tau) * (pred - actual)
    }
}
