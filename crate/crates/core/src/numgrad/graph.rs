//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Graph`] and returns a [`Var`]
//! handle. Nodes are only ever appended, so creation order is a valid
//! topological order and [`Graph::backward`] walks it in reverse.
//!
//! Gradients accumulate: two `backward` calls without [`Graph::zero_grad`]
//! in between leave twice the gradient in every reachable node.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Softmax(Var),
    Normalize(Var),
    NegLogAt(Var, usize),
    Mix(Var, Var, Var),
    WeightedSum(Var, Vec<Var>),
    ScatterAdd(Var, Vec<usize>),
    Pad(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// A differentiation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn expect_vector(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 1 {
        return Err(Error::shape(op, t.shape(), &[t.len()]));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`; zeros if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf that shares storage with the caller (parameters are not copied).
    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                let brow = &db[p * n..(p + 1) * n];
                for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    /// Matrix `[m×k]` times vector `[k]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.shape().len() != 2 || tx.shape().len() != 1 || tw.shape()[1] != tx.len() {
            return Err(Error::shape("matvec", tw.shape(), tx.shape()));
        }
        let (m, k) = (tw.shape()[0], tw.shape()[1]);
        let xs = tx.data();
        let out: Vec<f64> = (0..m)
            .map(|i| {
                tw.data()[i * k..(i + 1) * k]
                    .iter()
                    .zip(xs)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x)))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| f(x)).collect(),
        )
        .expect("unary shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    /// Logistic function.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            expect_vector("concat", t)?;
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        expect_vector("slice", t)?;
        if len == 0 || start + len > t.len() {
            return Err(Error::shape("slice", t.shape(), &[start, len]));
        }
        let data = t.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice(a, start)))
    }

    /// Row `r` of a matrix (embedding lookup).
    pub fn row(&mut self, table: Var, r: usize) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 || r >= t.rows() {
            return Err(Error::shape("row", t.shape(), &[r]));
        }
        let data = t.row(r).to_vec();
        Ok(self.push(Tensor::vector(data), Op::Row(table, r)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Inner product of two same-shape tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("dot", ta, tb)?;
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// Numerically stable softmax of a vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        expect_vector("softmax", t)?;
        let out = softmax_slice(t.data());
        Ok(self.push(Tensor::vector(out), Op::Softmax(a)))
    }

    /// `x / sum(x)` for a vector of nonnegative entries with positive sum.
    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        expect_vector("normalize", t)?;
        let s: f64 = t.data().iter().sum();
        if s <= 0.0 {
            return Err(Error::Contract(
                "normalize of a vector with nonpositive sum".into(),
            ));
        }
        let out = t.data().iter().map(|x| x / s).collect();
        Ok(self.push(Tensor::vector(out), Op::Normalize(a)))
    }

    /// `-ln(max(x[index], LOG_FLOOR))` as a scalar.
    pub fn neg_log_at(&mut self, a: Var, index: usize) -> Result<Var> {
        let t = self.value(a);
        expect_vector("neg_log_at", t)?;
        if index >= t.len() {
            return Err(Error::shape("neg_log_at", t.shape(), &[index]));
        }
        let v = -t.data()[index].max(LOG_FLOOR).ln();
        Ok(self.push(Tensor::scalar(v), Op::NegLogAt(a, index)))
    }

    /// Scalar-gated convex combination `g·a + (1−g)·b`.
    pub fn mix(&mut self, gate: Var, a: Var, b: Var) -> Result<Var> {
        let tg = self.value(gate);
        if tg.len() != 1 {
            return Err(Error::shape("mix", tg.shape(), &[1]));
        }
        let g = tg.item();
        let t = self.binary("mix", a, b, |x, y| g * x + (1.0 - g) * y)?;
        Ok(self.push(t, Op::Mix(gate, a, b)))
    }

    /// `Σ_i w[i] · items[i]` for equally shaped vectors.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let tw = self.value(weights);
        expect_vector("weighted_sum", tw)?;
        if items.is_empty() || tw.len() != items.len() {
            return Err(Error::shape("weighted_sum", tw.shape(), &[items.len()]));
        }
        let shape = self.value(items[0]).shape().to_vec();
        let mut out = vec![0.0; self.value(items[0]).len()];
        for (&w, &it) in tw.data().iter().zip(items) {
            let ti = self.value(it);
            if ti.shape() != shape.as_slice() {
                return Err(Error::shape("weighted_sum", &shape, ti.shape()));
            }
            for (o, x) in out.iter_mut().zip(ti.data()) {
                *o += w * x;
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::WeightedSum(weights, items.to_vec())))
    }

    /// `out[indices[i]] += x[i]` into a zero vector of length `len`.
    pub fn scatter_add(&mut self, a: Var, indices: &[usize], len: usize) -> Result<Var> {
        let t = self.value(a);
        expect_vector("scatter_add", t)?;
        if indices.len() != t.len() || indices.iter().any(|&i| i >= len) || len == 0 {
            return Err(Error::shape("scatter_add", t.shape(), &[len]));
        }
        let mut out = vec![0.0; len];
        for (&i, &x) in indices.iter().zip(t.data()) {
            out[i] += x;
        }
        Ok(self.push(Tensor::vector(out), Op::ScatterAdd(a, indices.to_vec())))
    }

    /// Zero-extends a vector to length `len`.
    pub fn pad(&mut self, a: Var, len: usize) -> Result<Var> {
        let t = self.value(a);
        expect_vector("pad", t)?;
        if len < t.len() {
            return Err(Error::shape("pad", t.shape(), &[len]));
        }
        let mut out = t.data().to_vec();
        out.resize(len, 0.0);
        Ok(self.push(Tensor::vector(out), Op::Pad(a)))
    }

    /// Back-propagates from a scalar `loss`, accumulating into every
    /// reachable node's gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut tmp: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        tmp[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = tmp[i].take() else { continue };
            self.propagate(i, &g, &mut tmp);
            tmp[i] = Some(g);
        }

        for (i, g) in tmp.into_iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], tmp: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| -> &Tensor { &nodes[v.0].value };
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let slot = tmp[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        let out = &nodes[i].value;

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for c in 0..n {
                                s += g[r * n + c] * tb.data()[p * n + c];
                            }
                            ga[r * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for p in 0..k {
                        for r in 0..m {
                            let arp = ta.data()[r * k + p];
                            for c in 0..n {
                                gb[p * n + c] += arp * g[r * n + c];
                            }
                        }
                    }
                });
            }
            Op::MatVec(w, x) => {
                let (tw, tx) = (val(*w), val(*x));
                let k = tx.len();
                acc(*w, &mut |gw| {
                    for (r, &gr) in g.iter().enumerate() {
                        for (o, &xv) in gw[r * k..(r + 1) * k].iter_mut().zip(tx.data()) {
                            *o += gr * xv;
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, &gr) in g.iter().enumerate() {
                        for (o, &wv) in gx.iter_mut().zip(&tw.data()[r * k..(r + 1) * k]) {
                            *o += gr * wv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, d)| *o += d)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, d)| *o += d)
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, d)| *o += d)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, d)| *o -= d)
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for ((o, d), y) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += d * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, d), x) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += d * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, d)| *o += c * d)
                });
            }
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((o, d), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *o += d * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((o, d), y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *o += d * y * (1.0 - y);
                }
            }),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(p, &mut |gp| {
                        gp.iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(o, d)| *o += d)
                    });
                    off += n;
                }
            }
            Op::Slice(a, start) => acc(*a, &mut |ga| {
                ga[*start..*start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, d)| *o += d)
            }),
            Op::Row(table, r) => {
                let c = val(*table).cols();
                acc(*table, &mut |gt| {
                    gt[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, d)| *o += d)
                });
            }
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::Dot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    ga.iter_mut()
                        .zip(tb.data())
                        .for_each(|(o, y)| *o += g[0] * y)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut()
                        .zip(ta.data())
                        .for_each(|(o, x)| *o += g[0] * x)
                });
            }
            Op::Softmax(a) => {
                let y = out.data();
                let dy_y: f64 = g.iter().zip(y).map(|(d, p)| d * p).sum();
                acc(*a, &mut |ga| {
                    for ((o, d), p) in ga.iter_mut().zip(g).zip(y) {
                        *o += p * (d - dy_y);
                    }
                });
            }
            Op::Normalize(a) => {
                let x = val(*a).data();
                let s: f64 = x.iter().sum();
                let dy_x: f64 = g.iter().zip(x).map(|(d, v)| d * v).sum();
                acc(*a, &mut |ga| {
                    for (o, d) in ga.iter_mut().zip(g) {
                        *o += d / s - dy_x / (s * s);
                    }
                });
            }
            Op::NegLogAt(a, idx) => {
                let x = val(*a).data()[*idx];
                if x > LOG_FLOOR {
                    acc(*a, &mut |ga| ga[*idx] -= g[0] / x);
                }
            }
            Op::Mix(gate, a, b) => {
                let gv = val(*gate).item();
                let (ta, tb) = (val(*a), val(*b));
                let dg: f64 = g
                    .iter()
                    .zip(ta.data().iter().zip(tb.data()))
                    .map(|(d, (x, y))| d * (x - y))
                    .sum();
                acc(*gate, &mut |gg| gg[0] += dg);
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, d)| *o += gv * d)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, d)| *o += (1.0 - gv) * d)
                });
            }
            Op::WeightedSum(w, items) => {
                let tw = val(*w);
                let dw: Vec<f64> = items
                    .iter()
                    .map(|&it| val(it).data().iter().zip(g).map(|(x, d)| x * d).sum())
                    .collect();
                acc(*w, &mut |gw| {
                    gw.iter_mut().zip(&dw).for_each(|(o, d)| *o += d)
                });
                for (&it, &wv) in items.iter().zip(tw.data()) {
                    acc(it, &mut |gi| {
                        gi.iter_mut().zip(g).for_each(|(o, d)| *o += wv * d)
                    });
                }
            }
            Op::ScatterAdd(a, indices) => acc(*a, &mut |ga| {
                for (o, &j) in ga.iter_mut().zip(indices) {
                    *o += g[j];
                }
            }),
            Op::Pad(a) => {
                let n = val(*a).len();
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(&g[..n]).for_each(|(o, d)| *o += d)
                });
            }
        }
    }
}

/// Max-subtracted softmax over a slice.
pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}
