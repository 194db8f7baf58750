//! Reverse-mode differentiation by operation recording.
//!
//! A [`Tape`] records every primitive as it executes. [`Tape::backward`]
//! walks the record from the loss node back to the first node, so the
//! traversal order is exactly the reverse of execution order.

use super::ops;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddCol(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Transpose(Var),
    Column(Var, usize),
    HStack(Vec<Var>),
    RowSlice {
        x: Var,
        start: usize,
        len: usize,
    },
    MaxPoolTime {
        x: Var,
        k: usize,
        s: usize,
        argmax: Vec<usize>,
    },
    SoftmaxRows(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visit_order: Vec<usize>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Node indices in the order backward visited them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Replaces the value of a leaf; call [`Tape::replay`] to propagate it.
    pub fn set_leaf(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::invalid("set_leaf on a non-leaf node"));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::shape("set_leaf", node.value.shape(), value.shape()));
        }
        node.value = value;
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (value, op) = self.eval(op)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Recomputes every non-leaf node in execution order.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let (value, op) = self.eval(op)?;
            self.nodes[i] = Node { value, op };
        }
        Ok(())
    }

    fn v(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn eval(&self, op: Op) -> Result<(Tensor, Op)> {
        let value = match &op {
            Op::Leaf => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => ops::matmul(self.v(*a), self.v(*b))?,
            Op::Add(a, b) => {
                let (x, y) = (self.v(*a), self.v(*b));
                if x.shape() != y.shape() {
                    return Err(Error::shape("add", x.shape(), y.shape()));
                }
                let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
                Tensor::checked(x.shape().to_vec(), data, "add")?
            }
            Op::AddCol(a, b) => {
                let (x, bias) = (self.v(*a), self.v(*b));
                if !x.is_matrix() || bias.shape() != [x.rows(), 1] {
                    return Err(Error::shape("add_col", x.shape(), bias.shape()));
                }
                let n = x.cols();
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v + bias.data()[i / n])
                    .collect();
                Tensor::checked(x.shape().to_vec(), data, "add_col")?
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.v(*a), self.v(*b));
                if x.shape() != y.shape() {
                    return Err(Error::shape("mul", x.shape(), y.shape()));
                }
                let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                Tensor::checked(x.shape().to_vec(), data, "mul")?
            }
            Op::Scale(a, c) => {
                let x = self.v(*a);
                let data = x.data().iter().map(|v| v * c).collect();
                Tensor::checked(x.shape().to_vec(), data, "scale")?
            }
            Op::Tanh(a) => map(self.v(*a), f64::tanh),
            Op::Sigmoid(a) => map(self.v(*a), sigmoid),
            Op::Exp(a) => {
                let x = self.v(*a);
                let data = x.data().iter().map(|v| v.exp()).collect();
                Tensor::checked(x.shape().to_vec(), data, "exp")?
            }
            Op::Clamp { x, lo, hi } => map(self.v(*x), |v| v.clamp(*lo, *hi)),
            Op::Transpose(a) => self.v(*a).transpose(),
            Op::Column(a, j) => {
                let x = self.v(*a);
                if !x.is_matrix() || *j >= x.cols() {
                    return Err(Error::shape("column", x.shape(), &[*j]));
                }
                Tensor::from_raw(vec![x.rows(), 1], x.column(*j))
            }
            Op::HStack(parts) => {
                let first = self.v(*parts
                    .first()
                    .ok_or_else(|| Error::invalid("hstack needs at least one input"))?);
                let rows = first.rows();
                let mut cols = 0;
                for p in parts {
                    let t = self.v(*p);
                    if !t.is_matrix() || t.rows() != rows {
                        return Err(Error::shape("hstack", first.shape(), t.shape()));
                    }
                    cols += t.cols();
                }
                let mut data = vec![0.0; rows * cols];
                let mut offset = 0;
                for p in parts {
                    let t = self.v(*p);
                    for r in 0..rows {
                        data[r * cols + offset..r * cols + offset + t.cols()].copy_from_slice(t.row(r));
                    }
                    offset += t.cols();
                }
                Tensor::from_raw(vec![rows, cols], data)
            }
            Op::RowSlice { x, start, len } => {
                let t = self.v(*x);
                if !t.is_matrix() || *len == 0 || start + len > t.rows() {
                    return Err(Error::shape("row_slice", t.shape(), &[*start, *len]));
                }
                let n = t.cols();
                Tensor::from_raw(vec![*len, n], t.data()[start * n..(start + len) * n].to_vec())
            }
            Op::MaxPoolTime { x, k, s, .. } => {
                let (out, argmax) = ops::maxpool_time(self.v(*x), *k, *s)?;
                return Ok((
                    out,
                    Op::MaxPoolTime {
                        x: *x,
                        k: *k,
                        s: *s,
                        argmax,
                    },
                ));
            }
            Op::SoftmaxRows(a) => ops::softmax_rows(self.v(*a))?,
            Op::SoftmaxCrossEntropy { logits, target, .. } => {
                let z = self.v(*logits);
                if z.cols() != 1 || *target >= z.rows() {
                    return Err(Error::shape("softmax_cross_entropy", z.shape(), &[*target]));
                }
                let probs = ops::softmax_rows(&z.transpose())?.into_data();
                let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let loss = lse - z.data()[*target];
                let out = Tensor::checked(vec![1, 1], vec![loss], "softmax_cross_entropy")?;
                return Ok((
                    out,
                    Op::SoftmaxCrossEntropy {
                        logits: *logits,
                        target: *target,
                        probs,
                    },
                ));
            }
            Op::Sum(a) => {
                let s = self.v(*a).data().iter().sum();
                Tensor::checked(vec![1, 1], vec![s], "sum")?
            }
        };
        Ok((value, op))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    /// Adds an `m×1` column to every column of an `m×n` matrix.
    pub fn add_col(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddCol(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.push(Op::Clamp { x, lo, hi })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        self.push(Op::Column(a, j))
    }

    pub fn hstack(&mut self, parts: &[Var]) -> Result<Var> {
        self.push(Op::HStack(parts.to_vec()))
    }

    pub fn row_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::RowSlice { x, start, len })
    }

    pub fn maxpool_time(&mut self, x: Var, k: usize, s: usize) -> Result<Var> {
        self.push(Op::MaxPoolTime {
            x,
            k,
            s,
            argmax: Vec::new(),
        })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SoftmaxRows(a))
    }

    /// Cross-entropy of a `P×1` logit column against a class index.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.push(Op::SoftmaxCrossEntropy {
            logits,
            target,
            probs: Vec::new(),
        })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    /// Reverse pass from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::shape("backward", root.shape(), &[1, 1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.shape(), 1.0));
        let mut visit_order = Vec::with_capacity(loss.0 + 1);

        for i in (0..=loss.0).rev() {
            visit_order.push(i);
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.v(*a), self.v(*b));
                    ops::matmul_nt_acc(slot(&mut grads, *a, av.shape()).data_mut(), &g, bv);
                    ops::matmul_tn_acc(slot(&mut grads, *b, bv.shape()).data_mut(), av, &g);
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    slot(&mut grads, *b, g.shape()).add_assign(&g);
                }
                Op::AddCol(a, b) => {
                    let n = g.cols();
                    let gb: Vec<f64> = (0..g.rows())
                        .map(|r| g.data()[r * n..(r + 1) * n].iter().sum())
                        .collect();
                    accumulate(&mut grads, *b, Tensor::from_raw(vec![g.rows(), 1], gb));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = zip(&g, self.v(*b), |gv, bv| gv * bv);
                    let gb = zip(&g, self.v(*a), |gv, av| gv * av);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, map(&g, |v| v * c)),
                Op::Tanh(a) => {
                    let ga = zip(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, zip(&g, &node.value, |gv, y| gv * y)),
                Op::Clamp { x, lo, hi } => {
                    let ga = zip(&g, self.v(*x), |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 });
                    accumulate(&mut grads, *x, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Column(a, j) => {
                    let src = self.v(*a);
                    let n = src.cols();
                    let ga = slot(&mut grads, *a, src.shape()).data_mut();
                    for (r, gv) in g.data().iter().enumerate() {
                        ga[r * n + j] += gv;
                    }
                }
                Op::HStack(parts) => {
                    let mut offset = 0;
                    let width = g.cols();
                    for p in parts {
                        let t = self.v(*p);
                        let (rows, cols) = (t.rows(), t.cols());
                        let gp = slot(&mut grads, *p, t.shape()).data_mut();
                        for r in 0..rows {
                            let src = &g.data()[r * width + offset..r * width + offset + cols];
                            for (o, v) in gp[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                        offset += cols;
                    }
                }
                Op::RowSlice { x, start, len } => {
                    let src = self.v(*x);
                    let n = src.cols();
                    let ga = slot(&mut grads, *x, src.shape()).data_mut();
                    for (o, v) in ga[start * n..(start + len) * n].iter_mut().zip(g.data()) {
                        *o += v;
                    }
                }
                Op::MaxPoolTime { x, argmax, .. } => {
                    let src = self.v(*x);
                    let tp = g.cols();
                    let mut ga = Tensor::zeros(src.shape());
                    for ch in 0..g.rows() {
                        for w in 0..tp {
                            let t = argmax[ch * tp + w];
                            let cur = ga.get(ch, t);
                            ga.set(ch, t, cur + g.get(ch, w));
                        }
                    }
                    accumulate(&mut grads, *x, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut ga = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..n {
                            ga[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::from_raw(y.shape().to_vec(), ga));
                }
                Op::SoftmaxCrossEntropy { logits, target, probs } => {
                    let gv = g.data()[0];
                    let ga: Vec<f64> = probs
                        .iter()
                        .enumerate()
                        .map(|(i, p)| gv * (p - if i == *target { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(&mut grads, *logits, Tensor::from_raw(vec![probs.len(), 1], ga));
                }
                Op::Sum(a) => {
                    let src = self.v(*a);
                    accumulate(&mut grads, *a, Tensor::full(src.shape(), g.data()[0]));
                }
            }
            // Keep the gradient so callers can read it for any node.
            grads[i] = Some(g);
        }
        for g in grads.iter().flatten() {
            super::tensor::check_finite(g.data(), "backward")?;
        }
        Ok(Gradients { grads, visit_order })
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_raw(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_raw(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// The gradient buffer of `v`, created as zeros on first use.
fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
