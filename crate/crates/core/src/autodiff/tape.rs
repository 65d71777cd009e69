//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! Every forward op appends a node to the [`Tape`]; nodes are stored in
//! creation order, which is a topological order of the computation, so the
//! reverse pass is a single backwards sweep over the node list.

use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Mul(Var, Var),
    Add(Var, Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    MeanPool { x: Var, axis: usize },
    Softmax(Var),
    ScaledDot { q: Var, k: Var },
    BatchMatMul { a: Var, v: Var },
    SquaredError { a: Var, b: Var, reduction: Reduction },
    WeightedSum { terms: Vec<(f64, Var)> },
    GradReverse { x: Var, lambda: f64 },
    SelectRows { x: Var, rows: Vec<usize> },
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize, len: usize },
    RbfMmd { a: Var, b: Var, bandwidth: f64, swapped: bool },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::MatMul { x, w } => vec![*x, *w],
            Op::AddBias { x, b } => vec![*x, *b],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Mul(a, b) | Op::Add(a, b) => vec![*a, *b],
            Op::Sigmoid(x) | Op::Softplus(x) | Op::Relu(x) | Op::Softmax(x) | Op::Reshape(x) => vec![*x],
            Op::MeanPool { x, .. } => vec![*x],
            Op::ScaledDot { q, k } => vec![*q, *k],
            Op::BatchMatMul { a, v } => vec![*a, *v],
            Op::SquaredError { a, b, .. } => vec![*a, *b],
            Op::WeightedSum { terms } => terms.iter().map(|(_, v)| *v).collect(),
            Op::GradReverse { x, .. } => vec![*x],
            Op::SelectRows { x, .. } => vec![*x],
            Op::Slice { x, .. } => vec![*x],
            Op::RbfMmd { a, b, .. } => vec![*a, *b],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            grads: params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Whether `a` precedes `b` in the canonical argument order used by the MMD op.
fn mmd_canonical(a: &Tensor, b: &Tensor) -> bool {
    use std::cmp::Ordering;
    match a.len().cmp(&b.len()) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    for (x, y) in a.data().iter().zip(b.data()) {
        match x.total_cmp(y) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    true
}

/// Biased MMD² estimate with kernel `exp(-|x-y|² / (2 bw²))`. Rows are samples.
/// Arguments are put in a canonical order first, so the result is bitwise
/// symmetric in its arguments.
pub fn rbf_mmd2(a: &Tensor, b: &Tensor, bandwidth: f64) -> Result<f64> {
    check_mmd_shapes(a, b)?;
    let (first, second) = if mmd_canonical(a, b) { (a, b) } else { (b, a) };
    Ok(mmd_value(first, second, bandwidth))
}

fn check_mmd_shapes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::shape("rbf_mmd", a.shape(), b.shape()));
    }
    if a.shape()[0] == 0 || b.shape()[0] == 0 {
        return Err(Error::Contract("rbf_mmd needs two non-empty groups".into()));
    }
    Ok(())
}

fn mmd_value(a: &Tensor, b: &Tensor, bandwidth: f64) -> f64 {
    let d = a.shape()[1];
    let (na, nb) = (a.shape()[0], b.shape()[0]);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let within = |x: &Tensor, n: usize| {
        let mut off = 0.0;
        for i in 0..n {
            let xi = &x.data()[i * d..(i + 1) * d];
            for j in i + 1..n {
                off += (-sq_dist(xi, &x.data()[j * d..(j + 1) * d]) * inv).exp();
            }
        }
        (n as f64 + 2.0 * off) / (n * n) as f64
    };
    let mut cross = 0.0;
    for i in 0..na {
        let ai = &a.data()[i * d..(i + 1) * d];
        for j in 0..nb {
            cross += (-sq_dist(ai, &b.data()[j * d..(j + 1) * d]) * inv).exp();
        }
    }
    within(a, na) + within(b, nb) - 2.0 * cross / (na * nb) as f64
}

fn mmd_grads(a: &Tensor, b: &Tensor, bandwidth: f64) -> (Vec<f64>, Vec<f64>) {
    let d = a.shape()[1];
    let (na, nb) = (a.shape()[0], b.shape()[0]);
    let s2 = bandwidth * bandwidth;
    let inv = 1.0 / (2.0 * s2);
    let within = |x: &Tensor, n: usize| {
        let mut g = vec![0.0; n * d];
        let scale = 2.0 / ((n * n) as f64 * s2);
        for i in 0..n {
            for j in i + 1..n {
                let (xi, xj) = (&x.data()[i * d..(i + 1) * d], &x.data()[j * d..(j + 1) * d]);
                let k = (-sq_dist(xi, xj) * inv).exp();
                for c in 0..d {
                    let diff = xi[c] - xj[c];
                    g[i * d + c] -= scale * k * diff;
                    g[j * d + c] += scale * k * diff;
                }
            }
        }
        g
    };
    let mut ga = within(a, na);
    let mut gb = within(b, nb);
    let scale = 2.0 / ((na * nb) as f64 * s2);
    for i in 0..na {
        let ai = &a.data()[i * d..(i + 1) * d];
        for j in 0..nb {
            let bj = &b.data()[j * d..(j + 1) * d];
            let k = (-sq_dist(ai, bj) * inv).exp();
            for c in 0..d {
                let diff = ai[c] - bj[c];
                ga[i * d + c] += scale * k * diff;
                gb[j * d + c] -= scale * k * diff;
            }
        }
    }
    (ga, gb)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let inputs = op.inputs();
        let requires_grad = matches!(op, Op::Param(_)) || inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, params: &ParamStore, id: ParamId) -> Var {
        self.push(params.get(id).clone(), Op::Param(id))
    }

    /// `x @ w` over the last axis of `x`. `w` is either `[k, m]`, shared by
    /// every row, or `[T, k, m]`, one matrix per token position of `x: [.., T, k]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bad = || Error::shape("matmul", &xs, &ws);
        let k = *xs.last().ok_or_else(bad)?;
        let (positions, wk, m) = match ws.as_slice() {
            [wk, m] => (1, *wk, *m),
            [t, wk, m] => {
                if xs.len() < 2 || xs[xs.len() - 2] != *t {
                    return Err(bad());
                }
                (*t, *wk, *m)
            }
            _ => return Err(bad()),
        };
        if wk != k {
            return Err(bad());
        }
        let rows = self.value(x).len() / k.max(1);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let wbase = (r % positions) * k * m;
            let orow = &mut out[r * m..(r + 1) * m];
            for i in 0..k {
                let xi = xv[r * k + i];
                if xi == 0.0 {
                    continue;
                }
                let wrow = &wv[wbase + i * m..wbase + (i + 1) * m];
                for (o, wij) in orow.iter_mut().zip(wrow) {
                    *o += xi * wij;
                }
            }
        }
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = m;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { x, w }))
    }

    /// Adds `b` whose shape must equal the trailing dimensions of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return Err(Error::shape("add_bias", xs, bs));
        }
        let bv = self.value(b).data();
        let bl = bv.len();
        let mut out = self.value(x).clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o += bv[i % bl];
        }
        Ok(self.push(out, Op::AddBias { x, b }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*inputs.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let val = self.value(*v);
                let chunk = val.shape()[axis] * inner;
                out.extend_from_slice(&val.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect()).expect("same shape")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.unary(x, sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.unary(x, softplus);
        self.push(value, Op::Softplus(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.unary(x, |e| e.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || xs[axis] == 0 {
            return Err(Error::shape("mean_pool", &xs, &[axis]));
        }
        let (outer, len, inner) = split_axis(&xs, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xv[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let scale = 1.0 / len as f64;
        out.iter_mut().for_each(|e| *e *= scale);
        let mut shape = xs;
        shape.remove(axis);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MeanPool { x, axis }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let n = *xs.last().filter(|&&n| n > 0).ok_or_else(|| Error::shape("softmax", &xs, &[]))?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                sum += *e;
            }
            row.iter_mut().for_each(|e| *e /= sum);
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.push(value, Op::Softmax(x)))
    }

    /// Batched `q kᵀ / sqrt(d)` for `q: [B, T, d]`, `k: [B, S, d]`, giving `[B, T, S]`.
    pub fn scaled_dot(&mut self, q: Var, k: Var) -> Result<Var> {
        let (qs, ks) = (self.shape(q).to_vec(), self.shape(k).to_vec());
        let (b, t, d, s) = match (qs.as_slice(), ks.as_slice()) {
            ([b, t, d], [b2, s, d2]) if b == b2 && d == d2 => (*b, *t, *d, *s),
            _ => return Err(Error::shape("scaled_dot", &qs, &ks)),
        };
        let scale = 1.0 / (d as f64).sqrt();
        let (qv, kv) = (self.value(q).data(), self.value(k).data());
        let mut out = vec![0.0; b * t * s];
        for bi in 0..b {
            for ti in 0..t {
                let qrow = &qv[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for si in 0..s {
                    let krow = &kv[(bi * s + si) * d..(bi * s + si + 1) * d];
                    let dot: f64 = qrow.iter().zip(krow).map(|(a, c)| a * c).sum();
                    out[(bi * t + ti) * s + si] = dot * scale;
                }
            }
        }
        let value = Tensor::new(vec![b, t, s], out)?;
        Ok(self.push(value, Op::ScaledDot { q, k }))
    }

    /// Batched `a @ v` for `a: [B, T, S]`, `v: [B, S, d]`.
    pub fn batch_matmul(&mut self, a: Var, v: Var) -> Result<Var> {
        let (as_, vs) = (self.shape(a).to_vec(), self.shape(v).to_vec());
        let (b, t, s, d) = match (as_.as_slice(), vs.as_slice()) {
            ([b, t, s], [b2, s2, d]) if b == b2 && s == s2 => (*b, *t, *s, *d),
            _ => return Err(Error::shape("batch_matmul", &as_, &vs)),
        };
        let (av, vv) = (self.value(a).data(), self.value(v).data());
        let mut out = vec![0.0; b * t * d];
        for bi in 0..b {
            for ti in 0..t {
                let orow = &mut out[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for si in 0..s {
                    let w = av[(bi * t + ti) * s + si];
                    let vrow = &vv[(bi * s + si) * d..(bi * s + si + 1) * d];
                    for (o, x) in orow.iter_mut().zip(vrow) {
                        *o += w * x;
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, t, d], out)?;
        Ok(self.push(value, Op::BatchMatMul { a, v }))
    }

    /// Scalar sum (or mean) of `(a - b)²`.
    pub fn squared_error(&mut self, a: Var, b: Var, reduction: Reduction) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("squared_error", self.shape(a), self.shape(b)));
        }
        let n = self.value(a).len();
        let sum: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let out = match reduction {
            Reduction::Sum => sum,
            Reduction::Mean => sum / n.max(1) as f64,
        };
        Ok(self.push(Tensor::scalar(out), Op::SquaredError { a, b, reduction }))
    }

    /// `constant + Σ wᵢ xᵢ` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)], constant: f64) -> Result<Var> {
        let (_, first) = *terms
            .first()
            .ok_or_else(|| Error::Contract("weighted_sum of nothing".into()))?;
        let shape = self.shape(first).to_vec();
        let mut out = vec![constant; self.value(first).len()];
        for (w, v) in terms {
            if self.shape(*v) != shape.as_slice() {
                return Err(Error::shape("weighted_sum", &shape, self.shape(*v)));
            }
            for (o, x) in out.iter_mut().zip(self.value(*v).data()) {
                *o += w * x;
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::WeightedSum { terms: terms.to_vec() }))
    }

    /// Identity forward; multiplies the upstream gradient by `-lambda` backward.
    pub fn gradient_reversal(&mut self, x: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::Contract(format!("gradient reversal lambda must be >= 0, got {lambda}")));
        }
        let value = self.value(x).clone();
        Ok(self.push(value, Op::GradReverse { x, lambda }))
    }

    /// Rows of `x` along axis 0 (embedding lookup when `x` is a table).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let n = *xs.first().ok_or_else(|| Error::shape("select_rows", &xs, &[]))?;
        let width: usize = xs[1..].iter().product();
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= n {
                return Err(Error::Contract(format!("select_rows index {r} out of range for {n} rows")));
            }
            out.extend_from_slice(&xv[r * width..(r + 1) * width]);
        }
        let mut shape = xs;
        shape[0] = rows.len();
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(Error::shape("slice", &xs, &[axis, start, len]));
        }
        let (outer, full, inner) = split_axis(&xs, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Slice { x, axis, start, len }))
    }

    /// Biased RBF MMD² between the row sets `a: [na, d]` and `b: [nb, d]`.
    pub fn rbf_mmd(&mut self, a: Var, b: Var, bandwidth: f64) -> Result<Var> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Contract(format!("MMD bandwidth must be positive, got {bandwidth}")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        check_mmd_shapes(av, bv)?;
        let swapped = !mmd_canonical(av, bv);
        let value = if swapped {
            mmd_value(bv, av, bandwidth)
        } else {
            mmd_value(av, bv, bandwidth)
        };
        Ok(self.push(
            Tensor::scalar(value),
            Op::RbfMmd {
                a,
                b,
                bandwidth,
                swapped,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Parameters not reachable from the
    /// loss get zero gradients.
    pub fn backward(&self, loss: Var, params: &ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let dst = out.grads[id.0].data_mut();
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::MatMul { x, w } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let k = *xv.shape().last().unwrap();
                let ws = wv.shape();
                let (positions, m) = if ws.len() == 3 { (ws[0], ws[2]) } else { (1, ws[1]) };
                let rows = xv.len() / k.max(1);
                if let Some(dx) = self.acc(grads, *x) {
                    let wd = wv.data();
                    for r in 0..rows {
                        let wbase = (r % positions) * k * m;
                        let grow = &g[r * m..(r + 1) * m];
                        for i in 0..k {
                            let wrow = &wd[wbase + i * m..wbase + (i + 1) * m];
                            dx[r * k + i] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(dw) = self.acc(grads, *w) {
                    let xd = xv.data();
                    for r in 0..rows {
                        let wbase = (r % positions) * k * m;
                        let grow = &g[r * m..(r + 1) * m];
                        for i in 0..k {
                            let xi = xd[r * k + i];
                            if xi == 0.0 {
                                continue;
                            }
                            for (d, gj) in dw[wbase + i * m..wbase + (i + 1) * m].iter_mut().zip(grow) {
                                *d += xi * gj;
                            }
                        }
                    }
                }
            }
            Op::AddBias { x, b } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, s) in dx.iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    let bl = db.len();
                    for (i, s) in g.iter().enumerate() {
                        db[i % bl] += s;
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let size = self.shape(*v)[*axis];
                    if let Some(dv) = self.acc(grads, *v) {
                        let chunk = size * inner;
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset) * inner + chunk];
                            for (d, s) in dv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += size;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(grads, *a) {
                    for ((d, s), y) in da.iter_mut().zip(g).zip(bv) {
                        *d += s * y;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for ((d, s), x) in db.iter_mut().zip(g).zip(av) {
                        *d += s * x;
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(dv) = self.acc(grads, *v) {
                        for (d, s) in dv.iter_mut().zip(g) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, s), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += s * yi * (1.0 - yi);
                    }
                }
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, s), xi) in dx.iter_mut().zip(g).zip(xv) {
                        *d += s * sigmoid(*xi);
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, s), xi) in dx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *d += s;
                        }
                    }
                }
            }
            Op::MeanPool { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let scale = 1.0 / len as f64;
                if let Some(dx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for (d, s) in dx[base..base + inner].iter_mut().zip(src) {
                                *d += s * scale;
                            }
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap();
                let y = node.value.data();
                if let Some(dx) = self.acc(grads, *x) {
                    for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::ScaledDot { q, k } => {
                let (qv, kv) = (self.value(*q), self.value(*k));
                let (b, t, d) = (qv.shape()[0], qv.shape()[1], qv.shape()[2]);
                let s = kv.shape()[1];
                let scale = 1.0 / (d as f64).sqrt();
                if let Some(dq) = self.acc(grads, *q) {
                    for bi in 0..b {
                        for ti in 0..t {
                            for si in 0..s {
                                let gs = g[(bi * t + ti) * s + si] * scale;
                                let krow = &kv.data()[(bi * s + si) * d..(bi * s + si + 1) * d];
                                for (dd, kk) in dq[(bi * t + ti) * d..(bi * t + ti + 1) * d].iter_mut().zip(krow) {
                                    *dd += gs * kk;
                                }
                            }
                        }
                    }
                }
                if let Some(dk) = self.acc(grads, *k) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let qrow = &qv.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            for si in 0..s {
                                let gs = g[(bi * t + ti) * s + si] * scale;
                                for (dd, qq) in dk[(bi * s + si) * d..(bi * s + si + 1) * d].iter_mut().zip(qrow) {
                                    *dd += gs * qq;
                                }
                            }
                        }
                    }
                }
            }
            Op::BatchMatMul { a, v } => {
                let (av, vv) = (self.value(*a), self.value(*v));
                let (b, t, s) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let d = vv.shape()[2];
                if let Some(da) = self.acc(grads, *a) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let grow = &g[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            for si in 0..s {
                                let vrow = &vv.data()[(bi * s + si) * d..(bi * s + si + 1) * d];
                                da[(bi * t + ti) * s + si] += grow.iter().zip(vrow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                }
                if let Some(dv) = self.acc(grads, *v) {
                    for bi in 0..b {
                        for ti in 0..t {
                            let grow = &g[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            for si in 0..s {
                                let w = av.data()[(bi * t + ti) * s + si];
                                for (dd, gg) in dv[(bi * s + si) * d..(bi * s + si + 1) * d].iter_mut().zip(grow) {
                                    *dd += w * gg;
                                }
                            }
                        }
                    }
                }
            }
            Op::SquaredError { a, b, reduction } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = match reduction {
                    Reduction::Sum => 2.0 * g[0],
                    Reduction::Mean => 2.0 * g[0] / av.len().max(1) as f64,
                };
                if let Some(da) = self.acc(grads, *a) {
                    for ((d, x), y) in da.iter_mut().zip(av).zip(bv) {
                        *d += scale * (x - y);
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for ((d, x), y) in db.iter_mut().zip(av).zip(bv) {
                        *d -= scale * (x - y);
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for (w, v) in terms {
                    if let Some(dv) = self.acc(grads, *v) {
                        for (d, s) in dv.iter_mut().zip(g) {
                            *d += w * s;
                        }
                    }
                }
            }
            Op::GradReverse { x, lambda } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, s) in dx.iter_mut().zip(g) {
                        *d += -lambda * s;
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let width = node.value.len() / rows.len().max(1);
                if let Some(dx) = self.acc(grads, *x) {
                    for (i, &r) in rows.iter().enumerate() {
                        for (d, s) in dx[r * width..(r + 1) * width].iter_mut().zip(&g[i * width..(i + 1) * width]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, s) in dx.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
            Op::Slice { x, axis, start, len } => {
                let (outer, full, inner) = split_axis(self.shape(*x), *axis);
                if let Some(dx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, s) in dx[base..base + len * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::RbfMmd {
                a,
                b,
                bandwidth,
                swapped,
            } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (ga, gb) = if *swapped {
                    let (gb, ga) = mmd_grads(bv, av, *bandwidth);
                    (ga, gb)
                } else {
                    mmd_grads(av, bv, *bandwidth)
                };
                let up = g[0];
                if let Some(da) = self.acc(grads, *a) {
                    for (d, s) in da.iter_mut().zip(&ga) {
                        *d += up * s;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for (d, s) in db.iter_mut().zip(&gb) {
                        *d += up * s;
                    }
                }
            }
        }
        Ok(())
    }
}
