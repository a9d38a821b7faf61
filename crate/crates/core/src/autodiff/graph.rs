//! Define-by-run tape. Every op appends a node holding its forward value and
//! enough context to run its backward rule; `backward` replays the tape in
//! reverse exactly once.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulBt {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Sigmoid(Var),
    Tanh(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Lookup {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax(Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
        mask: Vec<f64>,
        count: f64,
    },
    Sum(Var),
    MaskMul {
        x: Var,
        mask: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a leaf copied from `t` that always receives a gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let v = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
        self.push(v, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds this tape's gradient for `v` (if any) into `dst`.
    pub fn accumulate_into(&self, v: Var, dst: &mut Tensor) -> Result<()> {
        if let Some(g) = self.grad(v) {
            dst.accumulate_grad(g)?;
        }
        Ok(())
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b }, rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_bt")?;
        let (n, k2) = self.dims2(b, "matmul_bt")?;
        if k != k2 {
            return Err(Error::dim("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            true,
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMulBt { a, b },
            rg,
        ))
    }

    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        match (op, inputs) {
            (Elementwise::Add, [a, b]) => self.add(*a, *b),
            (Elementwise::Mul, [a, b]) => self.mul(*a, *b),
            (Elementwise::Sigmoid, [a]) => Ok(self.sigmoid(*a)),
            (Elementwise::Tanh, [a]) => Ok(self.tanh(*a)),
            _ => Err(Error::Contract(format!(
                "{op:?} called with {} inputs",
                inputs.len()
            ))),
        }
    }

    /// Output shape for a binary elementwise op: equal shapes, or one side a
    /// single-element tensor.
    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.numel() == 1 {
            Ok(sa.shape().to_vec())
        } else if sa.numel() == 1 {
            Ok(sb.shape().to_vec())
        } else {
            Err(Error::dim(op, sa.shape(), sb.shape()))
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (x, y) = (self.value(a).data(), self.value(b).data());
        match (x.len(), y.len()) {
            (n, m) if n == m => x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect(),
            (_, 1) => x.iter().map(|p| f(*p, y[0])).collect(),
            _ => y.iter().map(|q| f(x[0], *q)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("add", a, b)?;
        let out = self.binary(a, b, |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape("mul", a, b)?;
        let out = self.binary(a, b, |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = self.constant(Tensor::scalar(c));
        self.mul(a, c)
    }

    /// Adds a `[1×n]` bias row to every row of `x [m×n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "add_bias")?;
        let bshape = self.shape(bias);
        if bshape != [1, n] {
            return Err(Error::dim("add_bias", self.shape(x), bshape));
        }
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, w)| v + w))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBias { x, bias }, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = v.data().iter().map(|x| x.tanh()).collect();
        let shape = v.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Tanh(a), rg)
    }

    pub fn concat2(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        self.concat(&[a, b], axis)
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", &base, &[axis]));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (p, q))| i == axis || p == q);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::dim("slice", &shape, &[axis, start, end]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            out.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Slice { x, axis, start },
            rg,
        ))
    }

    /// Gathers rows of `table [V×d]`.
    pub fn lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table, "lookup")?;
        if ids.is_empty() {
            return Err(Error::Input("lookup with no ids".into()));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Lookup {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "softmax")?;
        let out = softmax_rows(self.value(x).data(), n);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax(x), rg))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, c) = self.dims2(logits, "softmax_cross_entropy")?;
        if targets.len() != b {
            return Err(Error::dim(
                "softmax_cross_entropy",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        let data = self.value(logits).data();
        let mut probs = Vec::with_capacity(b * c);
        let mut total = 0.0;
        for (row, &t) in data.chunks_exact(c).zip(targets) {
            if t >= c {
                return Err(Error::Index {
                    what: "class",
                    index: t,
                    bound: c,
                });
            }
            let lse = log_sum_exp(row);
            total += lse - row[t];
            probs.extend(row.iter().map(|z| (z - lse).exp()));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / b as f64),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error over entries where `mask` is non-zero. `target` is
    /// treated as a constant.
    pub fn mse(&mut self, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if target.len() != p.len() || mask.len() != p.len() {
            return Err(Error::dim(
                "mse",
                self.shape(pred),
                &[target.len(), mask.len()],
            ));
        }
        let count: f64 = mask.iter().sum();
        if count <= 0.0 {
            return Err(Error::Input("mse with an all-zero mask".into()));
        }
        let total: f64 = p
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((p, t), m)| m * (p - t) * (p - t))
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::Mse {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Multiplies by a fixed mask (dropout with an externally sampled mask).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::dim("mask_mul", self.shape(x), &[mask.len()]));
        }
        let out = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaskMul { x, mask }, rg))
    }

    /// Reverse pass from a scalar `loss`. The tape can be replayed only once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract("tape already consumed by backward".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backward_node(&self.nodes, &mut self.grads, i, &g);
        }
        Ok(())
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> &'a mut Vec<f64> {
    let n = nodes[v.0].value.numel();
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn backward_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let rg = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| nodes[v.0].value.data();
    let shape = |v: Var| nodes[v.0].value.shape();
    let add_into =
        |dst: &mut [f64], src: &[f64]| dst.iter_mut().zip(src).for_each(|(s, x)| *s += x);
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k) = (shape(*a)[0], shape(*a)[1]);
            let n = shape(*b)[1];
            if rg(*a) {
                gemm(
                    m,
                    n,
                    k,
                    g,
                    false,
                    val(*b),
                    true,
                    slot(nodes, grads, *a),
                    1.0,
                );
            }
            if rg(*b) {
                gemm(
                    k,
                    m,
                    n,
                    val(*a),
                    true,
                    g,
                    false,
                    slot(nodes, grads, *b),
                    1.0,
                );
            }
        }
        Op::MatMulBt { a, b } => {
            let (m, k) = (shape(*a)[0], shape(*a)[1]);
            let n = shape(*b)[0];
            if rg(*a) {
                gemm(
                    m,
                    n,
                    k,
                    g,
                    false,
                    val(*b),
                    false,
                    slot(nodes, grads, *a),
                    1.0,
                );
            }
            if rg(*b) {
                gemm(
                    n,
                    m,
                    k,
                    g,
                    true,
                    val(*a),
                    false,
                    slot(nodes, grads, *b),
                    1.0,
                );
            }
        }
        Op::Add { a, b } => {
            for v in [*a, *b] {
                if rg(v) {
                    let s = slot(nodes, grads, v);
                    if s.len() == g.len() {
                        add_into(s, g);
                    } else {
                        s[0] += g.iter().sum::<f64>();
                    }
                }
            }
        }
        Op::Mul { a, b } => {
            for (v, other) in [(*a, *b), (*b, *a)] {
                if !rg(v) {
                    continue;
                }
                let o = val(other);
                let s = slot(nodes, grads, v);
                match (s.len() == g.len(), o.len() == g.len()) {
                    (true, true) => s
                        .iter_mut()
                        .zip(g.iter().zip(o))
                        .for_each(|(s, (x, y))| *s += x * y),
                    (true, false) => s.iter_mut().zip(g).for_each(|(s, x)| *s += x * o[0]),
                    (false, _) => s[0] += g.iter().zip(o).map(|(x, y)| x * y).sum::<f64>(),
                }
            }
        }
        Op::AddBias { x, bias } => {
            if rg(*x) {
                add_into(slot(nodes, grads, *x), g);
            }
            if rg(*bias) {
                let n = nodes[bias.0].value.numel();
                let s = slot(nodes, grads, *bias);
                for row in g.chunks_exact(n) {
                    add_into(s, row);
                }
            }
        }
        Op::Sigmoid(a) => {
            if rg(*a) {
                let y = nodes[i].value.data();
                let s = slot(nodes, grads, *a);
                for ((s, gv), yv) in s.iter_mut().zip(g).zip(y) {
                    *s += gv * yv * (1.0 - yv);
                }
            }
        }
        Op::Tanh(a) => {
            if rg(*a) {
                let y = nodes[i].value.data();
                let s = slot(nodes, grads, *a);
                for ((s, gv), yv) in s.iter_mut().zip(g).zip(y) {
                    *s += gv * (1.0 - yv * yv);
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let base = shape(inputs[0]);
            let outer: usize = base[..*axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let total = nodes[i].value.shape()[*axis] * inner;
            let mut offset = 0;
            for &v in inputs {
                let chunk = shape(v)[*axis] * inner;
                if rg(v) {
                    let s = slot(nodes, grads, v);
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + chunk];
                        add_into(&mut s[o * chunk..(o + 1) * chunk], src);
                    }
                }
                offset += chunk;
            }
        }
        Op::Slice { x, axis, start } => {
            if rg(*x) {
                let xs = shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let span = xs[*axis] * inner;
                let width = nodes[i].value.shape()[*axis] * inner;
                let s = slot(nodes, grads, *x);
                for o in 0..outer {
                    let base = o * span + start * inner;
                    add_into(&mut s[base..base + width], &g[o * width..(o + 1) * width]);
                }
            }
        }
        Op::Lookup { table, ids } => {
            if rg(*table) {
                let d = shape(*table)[1];
                let s = slot(nodes, grads, *table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut s[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
        }
        Op::Softmax(x) => {
            if rg(*x) {
                let n = *shape(*x).last().expect("rank 2");
                let y = nodes[i].value.data();
                let s = slot(nodes, grads, *x);
                for ((srow, grow), yrow) in s
                    .chunks_exact_mut(n)
                    .zip(g.chunks_exact(n))
                    .zip(y.chunks_exact(n))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((s, gv), yv) in srow.iter_mut().zip(grow).zip(yrow) {
                        *s += yv * (gv - dot);
                    }
                }
            }
        }
        Op::SoftmaxCe {
            logits,
            targets,
            probs,
        } => {
            if rg(*logits) {
                let c = shape(*logits)[1];
                let scale = g[0] / targets.len() as f64;
                let s = slot(nodes, grads, *logits);
                for ((srow, prow), &t) in s
                    .chunks_exact_mut(c)
                    .zip(probs.chunks_exact(c))
                    .zip(targets)
                {
                    for (sv, pv) in srow.iter_mut().zip(prow) {
                        *sv += scale * pv;
                    }
                    srow[t] -= scale;
                }
            }
        }
        Op::Mse {
            pred,
            target,
            mask,
            count,
        } => {
            if rg(*pred) {
                let p = val(*pred);
                let scale = 2.0 * g[0] / count;
                let s = slot(nodes, grads, *pred);
                for (j, sv) in s.iter_mut().enumerate() {
                    *sv += scale * mask[j] * (p[j] - target[j]);
                }
            }
        }
        Op::Sum(x) => {
            if rg(*x) {
                slot(nodes, grads, *x).iter_mut().for_each(|s| *s += g[0]);
            }
        }
        Op::MaskMul { x, mask } => {
            if rg(*x) {
                let s = slot(nodes, grads, *x);
                for ((s, gv), m) in s.iter_mut().zip(g).zip(mask) {
                    *s += gv * m;
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(data: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(n) {
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|z| (z - lse).exp()));
    }
    out
}

/// `c = op(a)·op(b) + beta·c` where `op(a)` is `[m×k]` and `op(b)` is `[k×n]`,
/// all row-major. `*_t` marks a stored transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the assert above bounds every index touched for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
