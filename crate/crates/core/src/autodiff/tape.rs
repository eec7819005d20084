//! Reverse-mode tape with higher-order gradients.
//!
//! Every value participating in differentiation is a node on a [`Tape`].
//! Gradient rules are themselves written in terms of [`Var`] operations, so
//! running [`Tape::gradients_graph`] records the backward pass as new nodes
//! and the resulting gradients can be differentiated again.
//!
//! Values that do not depend on any leaf get no node at all; they behave as
//! constants. A tape created with [`Tape::inference`] never records.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};

const NO_NODE: usize = usize::MAX;

/// Lower bound applied to log-probabilities.
pub const LOG_PROB_FLOOR: f64 = -80.0;

/// Index value that produces a zero when gathering.
pub const GATHER_ZERO: usize = usize::MAX;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    Affine { scale: f64 },
    AddRow,
    SumRows,
    BroadcastRows,
    SumCols,
    BroadcastCols,
    Relu,
    Sigmoid,
    Tanh,
    Atan,
    Exp,
    Recip,
    LogSoftmax { clamped: Option<Arc<Vec<f64>>> },
    Sum,
    Expand,
    Gather { index: Arc<Vec<usize>> },
    ScatterAdd { index: Arc<Vec<usize>> },
    Concat { widths: Vec<usize> },
    Reshape,
}

#[derive(Clone)]
struct Input {
    id: usize,
    value: Tensor,
}

struct Node {
    op: Op,
    inputs: Vec<Input>,
    value: Tensor,
}

/// Append-only record of differentiable operations.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("recording", &self.recording)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that only evaluates: leaves become constants.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        if !self.recording {
            return self.constant(value);
        }
        let id = self.push_node(Op::Leaf, Vec::new(), value.clone());
        Var {
            tape: self,
            id,
            value,
        }
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        Var {
            tape: self,
            id: NO_NODE,
            value,
        }
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push_node(&self, op: Op, inputs: Vec<Input>, value: Tensor) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { op, inputs, value });
        id
    }

    fn record<'t>(&'t self, op: Op, inputs: &[&Var<'t>], value: Tensor) -> Var<'t> {
        for v in inputs {
            assert!(
                std::ptr::eq(v.tape, self),
                "operation mixes variables from different tapes"
            );
        }
        let tracked = self.recording && inputs.iter().any(|v| v.id != NO_NODE);
        let id = if tracked {
            let ins = inputs
                .iter()
                .map(|v| Input {
                    id: v.id,
                    value: v.value.clone(),
                })
                .collect();
            self.push_node(op, ins, value.clone())
        } else {
            NO_NODE
        };
        Var {
            tape: self,
            id,
            value,
        }
    }

    /// Concatenate along the last axis; all inputs share their leading shape.
    pub fn concat<'t>(&'t self, parts: &[&Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = parts[0].value.rows();
        let lead: Vec<usize> = match parts[0].value.rank() {
            0 => vec![],
            r => parts[0].value.shape()[..r - 1].to_vec(),
        };
        let widths: Vec<usize> = parts.iter().map(|p| p.value.cols()).collect();
        for p in parts {
            assert_eq!(
                p.value.rows(),
                rows,
                "concat row mismatch: {:?} vs {:?}",
                p.value.shape(),
                parts[0].value.shape()
            );
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.record(Op::Concat { widths }, parts, Tensor::new(&shape, data))
    }

    /// First-order gradients of `root` with respect to `wrt`, as plain tensors.
    pub fn gradients(&self, root: &Var<'_>, wrt: &[&Var<'_>]) -> Result<Vec<Tensor>> {
        let scratch = Tape::inference();
        let grads = self.backward_into(root, wrt, &scratch)?;
        Ok(grads.into_iter().map(|g| g.value).collect())
    }

    /// Gradients recorded on this tape, so they can be differentiated again.
    pub fn gradients_graph<'t>(&'t self, root: &Var<'t>, wrt: &[&Var<'t>]) -> Result<Vec<Var<'t>>> {
        self.backward_into(root, wrt, self)
    }

    fn backward_into<'s>(&self, root: &Var<'_>, wrt: &[&Var<'_>], target: &'s Tape) -> Result<Vec<Var<'s>>> {
        let create_graph = std::ptr::eq(self, target);
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        if root.id == NO_NODE {
            return Err(Error::Detached);
        }
        for (i, w) in wrt.iter().enumerate() {
            if w.id == NO_NODE {
                return Err(Error::NotOnTape(i));
            }
        }
        let lift = |inp: &Input| -> Var<'s> {
            Var {
                tape: target,
                id: if create_graph { inp.id } else { NO_NODE },
                value: inp.value.clone(),
            }
        };

        let n = root.id + 1;
        // Nodes downstream of some requested leaf.
        let mut relevant = vec![false; n];
        {
            let nodes = self.nodes.borrow();
            for w in wrt {
                if w.id < n {
                    relevant[w.id] = true;
                }
            }
            let first = wrt.iter().map(|w| w.id).min().unwrap_or(n);
            for i in first..n {
                if !relevant[i] {
                    relevant[i] = nodes[i]
                        .inputs
                        .iter()
                        .any(|inp| inp.id != NO_NODE && relevant[inp.id]);
                }
            }
        }

        let mut is_wrt = vec![false; n];
        for w in wrt {
            if w.id < n {
                is_wrt[w.id] = true;
            }
        }
        let mut kept: Vec<Option<Var<'s>>> = vec![None; n];
        let mut grads: Vec<Option<Var<'s>>> = vec![None; n];
        grads[root.id] = Some(target.constant(Tensor::full(root.value.shape(), 1.0)));
        for i in (0..n).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if is_wrt[i] {
                kept[i] = Some(g.clone());
            }
            let (op, inputs, value) = {
                let nodes = self.nodes.borrow();
                let node = &nodes[i];
                (node.op.clone(), node.inputs.clone(), node.value.clone())
            };
            if matches!(op, Op::Leaf) {
                continue;
            }
            let need: Vec<bool> = inputs
                .iter()
                .map(|inp| inp.id != NO_NODE && relevant[inp.id])
                .collect();
            if !need.iter().any(|&b| b) {
                continue;
            }
            let ins: Vec<Var<'s>> = inputs.iter().map(lift).collect();
            let out = lift(&Input { id: i, value });
            let contribs = vjp(&op, &ins, &out, &g, &need);
            for ((inp, c), needed) in inputs.iter().zip(contribs).zip(&need) {
                if !needed {
                    continue;
                }
                if let Some(c) = c {
                    let slot = &mut grads[inp.id];
                    *slot = Some(match slot.take() {
                        None => c,
                        Some(prev) => prev.add(&c),
                    });
                }
            }
        }
        Ok(wrt
            .iter()
            .map(|w| {
                let slot = if w.id < n { kept[w.id].clone() } else { None };
                slot.unwrap_or_else(|| target.constant(Tensor::zeros(w.value.shape())))
            })
            .collect())
    }
}

/// Handle to a value on a tape.
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    value: Tensor,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(")?;
        if self.id == NO_NODE {
            write!(f, "const, ")?;
        } else {
            write!(f, "#{}, ", self.id)?;
        }
        write!(f, "{:?})", self.value)
    }
}

fn check_same(op: &str, a: &Tensor, b: &Tensor) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    match t.rank() {
        2 => (t.shape()[0], t.shape()[1]),
        1 => (1, t.shape()[0]),
        _ => panic!("matmul expects a matrix, got shape {:?}", t.shape()),
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// True when gradients can flow into this value.
    pub fn is_tracked(&self) -> bool {
        self.id != NO_NODE
    }

    /// Same value cut off from the tape.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value.clone())
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.value.map(f);
        self.tape.record(op, &[self], value)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Var<'t> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) * op(other)` where `op` optionally transposes.
    pub fn matmul_t(&self, other: &Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        let (out, n, m) = matmul_raw(
            self.value.data(),
            as_matrix(&self.value),
            ta,
            other.value.data(),
            as_matrix(&other.value),
            tb,
        );
        self.tape
            .record(Op::MatMul { ta, tb }, &[self, other], Tensor::new(&[n, m], out))
    }

    pub fn add(&self, other: &Var<'t>) -> Var<'t> {
        check_same("add", &self.value, &other.value);
        let v = self.value.zip_map(&other.value, |a, b| a + b);
        self.tape.record(Op::Add, &[self, other], v)
    }

    pub fn sub(&self, other: &Var<'t>) -> Var<'t> {
        check_same("sub", &self.value, &other.value);
        let v = self.value.zip_map(&other.value, |a, b| a - b);
        self.tape.record(Op::Sub, &[self, other], v)
    }

    pub fn mul(&self, other: &Var<'t>) -> Var<'t> {
        check_same("mul", &self.value, &other.value);
        let v = self.value.zip_map(&other.value, |a, b| a * b);
        self.tape.record(Op::Mul, &[self, other], v)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t> {
        self.unary(Op::Affine { scale }, |x| scale * x + shift)
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.affine(s, 0.0)
    }

    pub fn neg(&self) -> Var<'t> {
        self.affine(-1.0, 0.0)
    }

    /// `x[n,m] + b[m]` broadcast over rows.
    pub fn add_row(&self, bias: &Var<'t>) -> Var<'t> {
        let m = self.value.cols();
        assert_eq!(
            bias.value.len(),
            m,
            "add_row: bias {:?} does not match columns of {:?}",
            bias.shape(),
            self.shape()
        );
        let b = bias.value.data();
        let data = self
            .value
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        self.tape
            .record(Op::AddRow, &[self, bias], Tensor::new(self.shape(), data))
    }

    /// `[n,m] -> [m]`.
    pub fn sum_rows(&self) -> Var<'t> {
        let m = self.value.cols();
        let mut out = vec![0.0; m];
        for row in self.value.data().chunks(m) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        self.tape.record(Op::SumRows, &[self], Tensor::vector(out))
    }

    /// `[m] -> [rows,m]`.
    pub fn broadcast_rows(&self, rows: usize) -> Var<'t> {
        let m = self.value.len();
        let mut out = Vec::with_capacity(rows * m);
        for _ in 0..rows {
            out.extend_from_slice(self.value.data());
        }
        self.tape.record(
            Op::BroadcastRows,
            &[self],
            Tensor::new(&[rows, m], out),
        )
    }

    /// Sum over the last axis.
    pub fn sum_cols(&self) -> Var<'t> {
        let m = self.value.cols();
        let out: Vec<f64> = self.value.data().chunks(m).map(|r| r.iter().sum()).collect();
        let shape = &self.shape()[..self.value.rank().saturating_sub(1)];
        self.tape.record(Op::SumCols, &[self], Tensor::new(shape, out))
    }

    /// Append an axis of length `cols`, repeating each value.
    pub fn broadcast_cols(&self, cols: usize) -> Var<'t> {
        let out: Vec<f64> = self
            .value
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, cols))
            .collect();
        let mut shape = self.shape().to_vec();
        shape.push(cols);
        self.tape
            .record(Op::BroadcastCols, &[self], Tensor::new(&shape, out))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn atan(&self) -> Var<'t> {
        self.unary(Op::Atan, f64::atan)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn recip(&self) -> Var<'t> {
        self.unary(Op::Recip, |x| 1.0 / x)
    }

    /// Row-wise log-softmax over the last axis, floored at [`LOG_PROB_FLOOR`].
    pub fn log_softmax(&self) -> Var<'t> {
        let m = self.value.cols();
        let mut out = Vec::with_capacity(self.value.len());
        let mut any_clamped = false;
        let mut mask = Vec::with_capacity(self.value.len());
        for row in self.value.data().chunks(m) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row {
                let y = x - lse;
                if y < LOG_PROB_FLOOR {
                    any_clamped = true;
                    out.push(LOG_PROB_FLOOR);
                    mask.push(0.0);
                } else {
                    out.push(y);
                    mask.push(1.0);
                }
            }
        }
        let clamped = any_clamped.then(|| Arc::new(mask));
        self.tape.record(
            Op::LogSoftmax { clamped },
            &[self],
            Tensor::new(self.shape(), out),
        )
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&self) -> Var<'t> {
        self.log_softmax().exp()
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value.sum();
        self.tape.record(Op::Sum, &[self], Tensor::scalar(s))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Broadcast a single-element value to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Var<'t> {
        let v = self.item();
        self.tape.record(Op::Expand, &[self], Tensor::full(shape, v))
    }

    /// `out[i] = self[index[i]]` on the flat buffer; [`GATHER_ZERO`] yields 0.
    pub fn gather(&self, index: Arc<Vec<usize>>, shape: &[usize]) -> Var<'t> {
        let src = self.value.data();
        let data = index
            .iter()
            .map(|&j| if j == GATHER_ZERO { 0.0 } else { src[j] })
            .collect();
        let value = Tensor::new(shape, data);
        self.tape.record(Op::Gather { index }, &[self], value)
    }

    /// `out[index[i]] += self[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&self, index: Arc<Vec<usize>>, shape: &[usize]) -> Var<'t> {
        assert_eq!(index.len(), self.value.len(), "scatter index length mismatch");
        let n: usize = shape.iter().product();
        let mut out = vec![0.0; n];
        for (&j, &x) in index.iter().zip(self.value.data()) {
            if j != GATHER_ZERO {
                out[j] += x;
            }
        }
        self.tape
            .record(Op::ScatterAdd { index }, &[self], Tensor::new(shape, out))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<'t> {
        let v = self.value.reshape(shape);
        self.tape.record(Op::Reshape, &[self], v)
    }

    /// Pick entry `cols[r]` from each row `r`.
    pub fn index_select(&self, cols: &[usize]) -> Var<'t> {
        let m = self.value.cols();
        assert_eq!(cols.len(), self.value.rows(), "index_select: one column per row");
        let index: Vec<usize> = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < m, "index_select: column {c} out of range {m}");
                r * m + c
            })
            .collect();
        self.gather(Arc::new(index), &[cols.len()])
    }

    /// Row `r` of a matrix, as a vector.
    pub fn row(&self, r: usize) -> Var<'t> {
        let m = self.value.cols();
        let index: Vec<usize> = (r * m..(r + 1) * m).collect();
        self.gather(Arc::new(index), &[m])
    }

    /// Columns `[start, start+len)` of every row.
    pub fn slice_cols(&self, start: usize, len: usize) -> Var<'t> {
        let m = self.value.cols();
        let rows = self.value.rows();
        assert!(start + len <= m, "slice_cols out of range");
        let index: Vec<usize> = (0..rows)
            .flat_map(|r| (start..start + len).map(move |c| r * m + c))
            .collect();
        let mut shape = self.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = len,
            None => shape.push(len),
        }
        self.gather(Arc::new(index), &shape)
    }

    /// Matrix transpose.
    pub fn transpose(&self) -> Var<'t> {
        let (r, c) = as_matrix(&self.value);
        let index: Vec<usize> = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather(Arc::new(index), &[c, r])
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Vector-Jacobian products, expressed with differentiable operations.
fn vjp<'s>(op: &Op, ins: &[Var<'s>], out: &Var<'s>, g: &Var<'s>, need: &[bool]) -> Vec<Option<Var<'s>>> {
    let tape = g.tape;
    let want = |i: usize| need.get(i).copied().unwrap_or(false);
    match op {
        Op::Leaf => vec![],
        Op::MatMul { ta, tb } => {
            let (a, b) = (&ins[0], &ins[1]);
            let (ta, tb) = (*ta, *tb);
            let da = want(0).then(|| {
                let d = if ta {
                    b.matmul_t(g, tb, true)
                } else {
                    g.matmul_t(b, false, !tb)
                };
                d.reshape(a.shape())
            });
            let db = want(1).then(|| {
                let d = if tb {
                    g.matmul_t(a, true, ta)
                } else {
                    a.matmul_t(g, !ta, false)
                };
                d.reshape(b.shape())
            });
            vec![da, db]
        }
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), want(1).then(|| g.neg())],
        Op::Mul => vec![
            want(0).then(|| g.mul(&ins[1])),
            want(1).then(|| g.mul(&ins[0])),
        ],
        Op::Affine { scale } => vec![Some(g.scale(*scale))],
        Op::AddRow => vec![Some(g.clone()), want(1).then(|| g.sum_rows().reshape(ins[1].shape()))],
        Op::SumRows => vec![Some(g.broadcast_rows(ins[0].value.rows()).reshape(ins[0].shape()))],
        Op::BroadcastRows => vec![Some(g.sum_rows().reshape(ins[0].shape()))],
        Op::SumCols => {
            let cols = ins[0].value.cols();
            vec![Some(g.broadcast_cols(cols).reshape(ins[0].shape()))]
        }
        Op::BroadcastCols => vec![Some(g.sum_cols())],
        Op::Relu => {
            let mask = ins[0].value.map(|x| if x > 0.0 { 1.0 } else { 0.0 });
            vec![Some(g.mul(&tape.constant(mask)))]
        }
        Op::Sigmoid => {
            let d = out.mul(&out.affine(-1.0, 1.0));
            vec![Some(g.mul(&d))]
        }
        Op::Tanh => {
            let d = out.mul(out).affine(-1.0, 1.0);
            vec![Some(g.mul(&d))]
        }
        Op::Atan => {
            let x = &ins[0];
            let d = x.mul(x).affine(1.0, 1.0).recip();
            vec![Some(g.mul(&d))]
        }
        Op::Exp => vec![Some(g.mul(out))],
        Op::Recip => {
            let d = out.mul(out).neg();
            vec![Some(g.mul(&d))]
        }
        Op::LogSoftmax { clamped } => {
            let g = match clamped {
                Some(mask) => g.mul(&tape.constant(Tensor::new(g.shape(), (**mask).clone()))),
                None => g.clone(),
            };
            let cols = out.value.cols();
            let total = g.sum_cols().broadcast_cols(cols).reshape(out.shape());
            vec![Some(g.sub(&out.exp().mul(&total)))]
        }
        Op::Sum => vec![Some(g.expand(ins[0].shape()))],
        Op::Expand => vec![Some(g.sum().reshape(ins[0].shape()))],
        Op::Gather { index } => vec![Some(g.scatter_add(Arc::clone(index), ins[0].shape()))],
        Op::ScatterAdd { index } => vec![Some(g.gather(Arc::clone(index), ins[0].shape()))],
        Op::Concat { widths } => {
            let mut start = 0;
            widths
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let s = start;
                    start += w;
                    want(i).then(|| g.slice_cols(s, w).reshape(ins[i].shape()))
                })
                .collect()
        }
        Op::Reshape => vec![Some(g.reshape(ins[0].shape()))],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.leaf(Tensor::scalar(5.0));
        let z = x.mul(&y);
        let g = tape.gradients(&z, &[&x, &y]).unwrap();
        assert_eq!(g[0].item(), 5.0);
        assert_eq!(g[1].item(), 3.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = x.mul(&x).mul(&x);
        let dy = tape.gradients_graph(&y, &[&x]).unwrap().remove(0);
        assert!((dy.item() - 12.0).abs() < 1e-12);
        let d2y = tape.gradients(&dy, &[&x]).unwrap();
        assert!((d2y[0].item() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let probe = tape.leaf(Tensor::scalar(2.0));
        let y = x.mul(&probe.detach()).add(&probe.detach());
        let g = tape.gradients(&y, &[&x, &probe]).unwrap();
        assert_eq!(g[0].item(), 2.0);
        assert_eq!(g[1].item(), 0.0);
        let d = x.detach();
        assert_eq!(d.value(), x.value());
        assert!(!d.is_tracked());
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(tape.gradients(&x, &[&x]), Err(Error::NotScalar(_))));
        assert!(matches!(tape.gradients(&c, &[&x]), Err(Error::Detached)));
        let s = x.sum();
        assert!(matches!(tape.gradients(&s, &[&c]), Err(Error::NotOnTape(0))));
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::inference();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
        let y = x.relu().sum();
        assert_eq!(y.item(), 1.0);
        assert!(tape.is_empty());
    }

    #[test]
    fn log_softmax_of_uniform_logits() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0; 4]));
        let y = x.log_softmax();
        for v in y.value().data() {
            assert!((v - 0.25f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_floor() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, -200.0]));
        let y = x.log_softmax();
        assert_eq!(y.value().data()[1], LOG_PROB_FLOOR);
        let g = tape.gradients(&y.index_select(&[1]).sum(), &[&x]).unwrap();
        assert!(g[0].all_finite());
    }
}
