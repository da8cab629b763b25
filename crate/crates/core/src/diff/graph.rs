//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep. A graph is
//! meant to live for one training step: after `backward` it refuses a second
//! pass until `reset`.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    idx: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.idx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m, k] x [k, n] -> [m, n]`
    Matmul,
    Add,
    /// `[r, c] + [c]`, the vector added to every row.
    AddRow,
    Sub,
    /// Elementwise product.
    Mul,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    /// `ln sigmoid(x)`, computed without overflow.
    LogSigmoid,
    /// Row-wise over the last dimension.
    LogSoftmax,
    /// Cosine similarity of two equal-length vectors, `[1]`.
    Cosine,
    /// `max(x, floor)`
    ClampMin(f64),
    Sum,
    Mean,
    Square,
    GatherRow(usize),
    /// Gather flat elements by index into a vector (repeats allowed).
    Select(Vec<usize>),
    /// Stack inputs with a common column count along the first axis.
    ConcatRows,
    /// Join single-row inputs side by side into one `[1, n]` row.
    ConcatCols,
    Reshape(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Matmul => "matmul",
            Primitive::Add => "add",
            Primitive::AddRow => "add_row",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Exp => "exp",
            Primitive::LogSigmoid => "log_sigmoid",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::Cosine => "cosine",
            Primitive::ClampMin(_) => "clamp_min",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Square => "square",
            Primitive::GatherRow(_) => "gather_row",
            Primitive::Select(_) => "select",
            Primitive::ConcatRows => "concat_rows",
            Primitive::ConcatCols => "concat_cols",
            Primitive::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::Matmul
            | Primitive::Add
            | Primitive::AddRow
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Cosine => Some(2),
            Primitive::ConcatRows | Primitive::ConcatCols => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug)]
struct Node {
    prim: Option<Primitive>,
    inputs: Vec<usize>,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: fresh_id(),
            nodes: Vec::new(),
            consumed: false,
            grad_enabled: true,
        }
    }

    /// Graph that records values only; nothing requires a gradient.
    pub fn inference() -> Self {
        Graph {
            grad_enabled: false,
            ..Graph::new()
        }
    }

    /// Drop all nodes. Handles from before the reset become dangling.
    pub fn reset(&mut self) {
        self.id = fresh_id();
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            prim: None,
            inputs: Vec::new(),
            value: t,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var {
            graph: self.id,
            idx,
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Constant leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::DanglingNode(v.idx));
        }
        Ok(v.idx)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.graph, self.id, "handle from another graph");
        &self.nodes[v.idx].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        v.graph == self.id && self.nodes[v.idx].requires_grad
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = prim.arity() {
            if inputs.len() != n {
                return Err(Error::invalid(format!(
                    "{} takes {n} inputs, got {}",
                    prim.name(),
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::invalid(format!("{} needs inputs", prim.name())));
        }
        let mut ids = Vec::with_capacity(inputs.len());
        for &v in inputs {
            ids.push(self.check(v)?);
        }
        let vals: Vec<&Tensor> = ids.iter().map(|&i| &self.nodes[i].value).collect();
        let value = forward(&prim, &vals)?;
        let requires_grad = self.grad_enabled && ids.iter().any(|&i| self.nodes[i].requires_grad);
        let idx = self.nodes.len();
        self.nodes.push(Node {
            prim: Some(prim),
            inputs: ids,
            value,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            idx,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Matmul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.apply(Primitive::AddRow, &[a, row])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }
    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::AddScalar(s), &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::LogSigmoid, &[a])
    }
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::LogSoftmax, &[a])
    }
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Cosine, &[a, b])
    }
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.apply(Primitive::ClampMin(floor), &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[a])
    }
    pub fn gather_row(&mut self, a: Var, row: usize) -> Result<Var> {
        self.apply(Primitive::GatherRow(row), &[a])
    }
    pub fn select(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Select(idx), &[a])
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatRows, parts)
    }
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatCols, parts)
    }
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Reshape(shape), &[a])
    }

    /// Sum of a list of one-element nodes, folded left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::invalid("add_all of an empty list"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Each primitive node with its first input's value.
    pub(crate) fn primitive_inputs(&self) -> impl Iterator<Item = (&Primitive, &Tensor)> + '_ {
        self.nodes.iter().filter_map(|n| {
            let p = n.prim.as_ref()?;
            Some((p, &self.nodes[n.inputs[0]].value))
        })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let root_idx = self.check(root)?;
        let root_shape = self.nodes[root_idx].value.shape();
        if self.nodes[root_idx].value.numel() != 1 {
            return Err(Error::NonScalarRoot(root_shape.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root_idx + 1];
        grads[root_idx] = Some(vec![1.0]);
        for i in (0..=root_idx).rev() {
            let node = &self.nodes[i];
            let prim = match (&node.prim, node.requires_grad) {
                (Some(p), true) => p,
                _ => continue,
            };
            let Some(gout) = grads[i].take() else { continue };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].requires_grad)
                .collect();
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let gins = vjp(prim, &ins, &node.value, &gout, &needs);
            for (k, g) in gins.into_iter().enumerate() {
                let Some(g) = g else { continue };
                let j = node.inputs[k];
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(gout);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }
}

fn shape_err(prim: &Primitive, ts: &[&Tensor]) -> Error {
    Error::Shape {
        primitive: prim.name(),
        shapes: ts.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // ln σ(x) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[m,n] += a[m,k] * b[k,n]`, ikj order.
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn forward(prim: &Primitive, x: &[&Tensor]) -> Result<Tensor> {
    let out = match prim {
        Primitive::Matmul => {
            let (a, b) = (x[0], x[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(prim, x));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut out = vec![0.0; m * n];
            gemm(a.data(), b.data(), &mut out, m, k, n);
            Tensor::from_parts(vec![m, n], out)
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            if x[0].shape() != x[1].shape() {
                return Err(shape_err(prim, x));
            }
            match prim {
                Primitive::Add => zip(x[0], x[1], |a, b| a + b),
                Primitive::Sub => zip(x[0], x[1], |a, b| a - b),
                _ => zip(x[0], x[1], |a, b| a * b),
            }
        }
        Primitive::AddRow => {
            let (a, r) = (x[0], x[1]);
            if a.shape().len() != 2 || r.numel() != a.cols() {
                return Err(shape_err(prim, x));
            }
            let c = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + r.data()[i % c])
                .collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        }
        Primitive::Scale(s) => map(x[0], |v| v * s),
        Primitive::AddScalar(s) => map(x[0], |v| v + s),
        Primitive::Relu => map(x[0], |v| if v > 0.0 { v } else { 0.0 }),
        Primitive::ClampMin(f) => map(x[0], |v| if v > *f { v } else { *f }),
        Primitive::Sigmoid => map(x[0], sigmoid),
        Primitive::Tanh => map(x[0], f64::tanh),
        Primitive::Exp => map(x[0], f64::exp),
        Primitive::LogSigmoid => map(x[0], log_sigmoid),
        Primitive::Square => map(x[0], |v| v * v),
        Primitive::LogSoftmax => {
            let a = x[0];
            let c = a.cols();
            let mut out = Vec::with_capacity(a.numel());
            for row in a.data().chunks(c) {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                out.extend(row.iter().map(|v| v - lse));
            }
            Tensor::from_parts(a.shape().to_vec(), out)
        }
        Primitive::Cosine => {
            let (u, v) = (x[0], x[1]);
            if u.numel() != v.numel() {
                return Err(shape_err(prim, x));
            }
            let nu = dot(u.data(), u.data()).sqrt();
            let nv = dot(v.data(), v.data()).sqrt();
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::ZeroNorm);
            }
            Tensor::scalar(dot(u.data(), v.data()) / (nu * nv))
        }
        Primitive::Sum => Tensor::scalar(x[0].data().iter().sum()),
        Primitive::Mean => Tensor::scalar(x[0].data().iter().sum::<f64>() / x[0].numel() as f64),
        Primitive::GatherRow(r) => {
            let a = x[0];
            if a.shape().len() != 2 || *r >= a.rows() {
                return Err(shape_err(prim, x));
            }
            Tensor::vector(a.row_slice(*r).to_vec())
        }
        Primitive::Select(idx) => {
            if idx.is_empty() || idx.iter().any(|&i| i >= x[0].numel()) {
                return Err(shape_err(prim, x));
            }
            Tensor::vector(idx.iter().map(|&i| x[0].data()[i]).collect())
        }
        Primitive::ConcatRows => {
            let c = x[0].cols();
            if x.iter().any(|t| t.cols() != c || t.shape().len() > 2) {
                return Err(shape_err(prim, x));
            }
            let rows: usize = x.iter().map(|t| t.rows()).sum();
            let data = x.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::from_parts(vec![rows, c], data)
        }
        Primitive::ConcatCols => {
            if x.iter().any(|t| t.rows() != 1) {
                return Err(shape_err(prim, x));
            }
            let data: Vec<f64> = x.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::row(data)
        }
        Primitive::Reshape(shape) => {
            if shape.iter().product::<usize>() != x[0].numel() || shape.contains(&0) {
                return Err(shape_err(prim, x));
            }
            Tensor::from_parts(shape.clone(), x[0].data().to_vec())
        }
    };
    Ok(out)
}

/// Vector-Jacobian products for each input that needs one.
fn vjp(
    prim: &Primitive,
    x: &[&Tensor],
    out: &Tensor,
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> {
        vec![Some((0..g.len()).map(|i| g[i] * f(i)).collect())]
    };
    match prim {
        Primitive::Matmul => {
            let (a, b) = (x[0], x[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = needs[0].then(|| {
                // dA = G B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        da[i * k + p] = dot(grow, &b.data()[p * n..(p + 1) * n]);
                    }
                }
                da
            });
            let db = needs[1].then(|| {
                // dB = A^T G
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += aip * gv;
                        }
                    }
                }
                db
            });
            vec![da, db]
        }
        Primitive::Add => vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())],
        Primitive::Sub => vec![
            needs[0].then(|| g.to_vec()),
            needs[1].then(|| g.iter().map(|v| -v).collect()),
        ],
        Primitive::Mul => vec![
            needs[0].then(|| g.iter().zip(x[1].data()).map(|(a, b)| a * b).collect()),
            needs[1].then(|| g.iter().zip(x[0].data()).map(|(a, b)| a * b).collect()),
        ],
        Primitive::AddRow => {
            let c = x[0].cols();
            let dr = needs[1].then(|| {
                let mut dr = vec![0.0; c];
                for row in g.chunks(c) {
                    dr.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                dr
            });
            vec![needs[0].then(|| g.to_vec()), dr]
        }
        Primitive::Scale(s) => vec![Some(g.iter().map(|v| v * s).collect())],
        Primitive::AddScalar(_) | Primitive::Reshape(_) => vec![Some(g.to_vec())],
        Primitive::Relu => {
            let xs = x[0].data();
            elementwise(&|i| if xs[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Primitive::ClampMin(f) => {
            let xs = x[0].data();
            elementwise(&|i| if xs[i] > *f { 1.0 } else { 0.0 })
        }
        Primitive::Sigmoid => {
            let y = out.data();
            elementwise(&|i| y[i] * (1.0 - y[i]))
        }
        Primitive::Tanh => {
            let y = out.data();
            elementwise(&|i| 1.0 - y[i] * y[i])
        }
        Primitive::Exp => {
            let y = out.data();
            elementwise(&|i| y[i])
        }
        Primitive::LogSigmoid => {
            let xs = x[0].data();
            elementwise(&|i| sigmoid(-xs[i]))
        }
        Primitive::Square => {
            let xs = x[0].data();
            elementwise(&|i| 2.0 * xs[i])
        }
        Primitive::LogSoftmax => {
            let c = out.cols();
            let mut dx = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(c).zip(out.data().chunks(c)) {
                let s: f64 = grow.iter().sum();
                dx.extend(grow.iter().zip(yrow).map(|(gv, y)| gv - y.exp() * s));
            }
            vec![Some(dx)]
        }
        Primitive::Cosine => {
            let (u, v) = (x[0].data(), x[1].data());
            let nu = dot(u, u).sqrt();
            let nv = dot(v, v).sqrt();
            let c = out.item();
            let go = g[0];
            // d cos / du = v/(|u||v|) - cos * u/|u|^2
            let du = needs[0].then(|| {
                u.iter()
                    .zip(v)
                    .map(|(ui, vi)| go * (vi / (nu * nv) - c * ui / (nu * nu)))
                    .collect()
            });
            let dv = needs[1].then(|| {
                u.iter()
                    .zip(v)
                    .map(|(ui, vi)| go * (ui / (nu * nv) - c * vi / (nv * nv)))
                    .collect()
            });
            vec![du, dv]
        }
        Primitive::Sum => vec![Some(vec![g[0]; x[0].numel()])],
        Primitive::Mean => {
            let n = x[0].numel();
            vec![Some(vec![g[0] / n as f64; n])]
        }
        Primitive::GatherRow(r) => {
            let c = x[0].cols();
            let mut d = vec![0.0; x[0].numel()];
            d[r * c..(r + 1) * c].copy_from_slice(g);
            vec![Some(d)]
        }
        Primitive::Select(idx) => {
            let mut d = vec![0.0; x[0].numel()];
            for (&i, gv) in idx.iter().zip(g) {
                d[i] += gv;
            }
            vec![Some(d)]
        }
        Primitive::ConcatRows | Primitive::ConcatCols => {
            let mut off = 0;
            x.iter()
                .zip(needs)
                .map(|(t, &need)| {
                    let n = t.numel();
                    let part = need.then(|| g[off..off + n].to_vec());
                    off += n;
                    part
                })
                .collect()
        }
    }
}
