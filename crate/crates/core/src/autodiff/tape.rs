//! Reverse-mode gradient tape.
//!
//! Every primitive appends one node holding its output value. `backward`
//! walks the nodes in exact reverse recording order, so inputs always
//! precede the nodes that consume them. Parameters are borrowed from a
//! [`ParamSet`] rather than copied, and their gradients are added into a
//! caller-owned [`GradStore`].

use std::borrow::Cow;
use std::collections::HashMap;

use crate::autodiff::params::{GradStore, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds accepted by [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Concat,
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    Softplus,
    Softmax,
    LogSoftmax,
    Sum,
    Mean,
    Slice { start: usize, len: usize },
    CrossEntropy { target: usize },
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Concat => "concat",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Softplus => "softplus",
            Primitive::Softmax => "softmax",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Slice { .. } => "slice",
            Primitive::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    EmbedRow { table: ParamId, row: usize },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scalar * tensor`, the scalar being the first input.
    ScalarMul(Var, Var),
    Concat(Vec<Var>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Slice { input: Var, start: usize, len: usize },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    params: Option<&'p ParamSet>,
    nodes: Vec<Node<'p>>,
    param_nodes: HashMap<ParamId, Var>,
    leaf_grads: HashMap<Var, Tensor>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    /// A tape without parameters; only leaves can require gradients.
    pub fn new() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            leaf_grads: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamSet) -> Self {
        Tape {
            params: Some(params),
            ..Tape::new()
        }
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

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf created with `requires_grad = true`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        if let Some(bad) = value.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: name,
                detail: format!("output contains {bad}"),
            });
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn any_grad(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies a recorded value into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn param_set(&self) -> Result<&'p ParamSet> {
        self.params
            .ok_or_else(|| Error::invalid("tape was created without a parameter set"))
    }

    /// Records a parameter once per tape; repeated uses share the node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_nodes.get(&id) {
            return Ok(v);
        }
        let params = self.param_set()?;
        if id.0 >= params.len() {
            return Err(Error::Index {
                op: "param",
                index: id.0,
                extent: params.len(),
            });
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(params.value(id)),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        Ok(v)
    }

    /// Row `row` of a 2-D parameter; the backward pass touches only that row.
    pub fn embed_row(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let params = self.param_set()?;
        let t = params.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Shape {
                op: "embed_row",
                lhs: t.shape().to_vec(),
                rhs: vec![row],
            });
        }
        if row >= t.shape()[0] {
            return Err(Error::Index {
                op: "embed_row",
                index: row,
                extent: t.shape()[0],
            });
        }
        let value = Tensor::from_parts(vec![t.last_dim()], t.row(row).to_vec());
        Ok(self.push(value, Op::EmbedRow { table, row }, true))
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{} takes {n} inputs, got {}",
                    prim.name(),
                    inputs.len()
                )))
            }
        };
        match prim {
            Primitive::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::Concat => self.concat(inputs),
            Primitive::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            Primitive::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            Primitive::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            Primitive::Exp => {
                arity(1)?;
                self.exp(inputs[0])
            }
            Primitive::Log => {
                arity(1)?;
                self.log(inputs[0])
            }
            Primitive::Softplus => {
                arity(1)?;
                self.softplus(inputs[0])
            }
            Primitive::Softmax => {
                arity(1)?;
                self.softmax(inputs[0])
            }
            Primitive::LogSoftmax => {
                arity(1)?;
                self.log_softmax(inputs[0])
            }
            Primitive::Sum => {
                arity(1)?;
                Ok(self.sum(inputs[0]))
            }
            Primitive::Mean => {
                arity(1)?;
                Ok(self.mean(inputs[0]))
            }
            Primitive::Slice { start, len } => {
                arity(1)?;
                self.slice(inputs[0], start, len)
            }
            Primitive::CrossEntropy { target } => {
                arity(1)?;
                self.cross_entropy(inputs[0], target)
            }
        }
    }

    /// `[m,k] x [k,n] -> [m,n]`, or vector-matrix `[k] x [k,n] -> [n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sb.len() != 2 {
            return Err(mismatch());
        }
        let (m, k, out_shape) = match sa.len() {
            1 => (1, sa[0], vec![sb[1]]),
            2 => (sa[0], sa[1], vec![sa[0], sb[1]]),
            _ => return Err(mismatch()),
        };
        if k != sb[0] {
            return Err(mismatch());
        }
        let n = sb[1];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, w) in row.iter_mut().zip(brow) {
                    *o += x * w;
                }
            }
        }
        let rg = self.any_grad(&[a, b]);
        self.push_checked(
            "matmul",
            Tensor::from_parts(out_shape, out),
            Op::MatMul { a, b, m, k, n },
            rg,
        )
    }

    /// Elementwise sum of equal shapes, or bias-add of a vector over the last axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let rg = self.any_grad(&[a, b]);
        if sa == sb {
            let out: Vec<f64> = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect();
            let shape = sa.to_vec();
            self.push_checked("add", Tensor::from_parts(shape, out), Op::Add(a, b), rg)
        } else if sb.len() == 1 && sb[0] == *sa.last().unwrap() {
            let cols = sb[0];
            let bias = self.value(b).data();
            let out: Vec<f64> = self
                .value(a)
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bias[i % cols])
                .collect();
            let shape = sa.to_vec();
            self.push_checked("add", Tensor::from_parts(shape, out), Op::AddBias(a, b), rg)
        } else {
            Err(Error::Shape {
                op: "add",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::Shape {
                op: "sub",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = sa.to_vec();
        let rg = self.any_grad(&[a, b]);
        self.push_checked("sub", Tensor::from_parts(shape, out), Op::Sub(a, b), rg)
    }

    /// Elementwise product of equal shapes, or scalar-times-tensor when
    /// exactly one side holds a single value.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let rg = self.any_grad(&[a, b]);
        if sa == sb {
            let out: Vec<f64> = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x * y)
                .collect();
            return self.push_checked("mul", Tensor::from_parts(sa, out), Op::Mul(a, b), rg);
        }
        let (s, t) = if self.value(a).is_scalar() {
            (a, b)
        } else if self.value(b).is_scalar() {
            (b, a)
        } else {
            return Err(Error::Shape {
                op: "mul",
                lhs: sa,
                rhs: sb,
            });
        };
        let k = self.value(s).data()[0];
        let shape = self.shape(t).to_vec();
        let out: Vec<f64> = self.value(t).data().iter().map(|x| k * x).collect();
        self.push_checked("mul", Tensor::from_parts(shape, out), Op::ScalarMul(s, t), rg)
    }

    /// Multiplies by a compile-time constant.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let c = self.constant(Tensor::from_parts(vec![1], vec![k]));
        self.mul(c, a)
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            total += s[s.len() - 1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.value(p).last_dim();
                out.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = self.any_grad(parts);
        self.push_checked(
            "concat",
            Tensor::from_parts(shape, out),
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let rg = self.any_grad(&[a]);
        self.push_checked(name, Tensor::from_parts(shape, out), op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::NonFinite {
                op: "log",
                detail: format!("log of non-positive value {bad}"),
            });
        }
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let cols = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[a]);
        self.push_checked("softmax", Tensor::from_parts(shape, out), Op::Softmax(a), rg)
    }

    /// Log-softmax over the last axis, via log-sum-exp.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let cols = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[a]);
        self.push_checked(
            "log_softmax",
            Tensor::from_parts(shape, out),
            Op::LogSoftmax(a),
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::from_parts(vec![1], vec![s]), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.any_grad(&[a]);
        self.push(Tensor::from_parts(vec![1], vec![s]), Op::Mean(a), rg)
    }

    /// `len` entries starting at `start` along the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let cols = t.last_dim();
        if len == 0 || start + len > cols {
            return Err(Error::Index {
                op: "slice",
                index: start + len,
                extent: cols,
            });
        }
        let out: Vec<f64> = t
            .data()
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Slice { input: a, start, len },
            rg,
        ))
    }

    /// Fused `-log softmax(logits)[target]` for a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 1 {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![target],
            });
        }
        if target >= t.numel() {
            return Err(Error::Index {
                op: "cross_entropy",
                index: target,
                extent: t.numel(),
            });
        }
        let lse = log_sum_exp(t.data());
        let nll = lse - t.data()[target];
        let probs: Vec<f64> = t.data().iter().map(|x| (x - lse).exp()).collect();
        let rg = self.any_grad(&[logits]);
        self.push_checked(
            "cross_entropy",
            Tensor::from_parts(vec![1], vec![nll]),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            rg,
        )
    }

    /// Accumulates `d loss / d x` into every leaf that requires gradients and
    /// every parameter (into `grads`, when it is sized for the parameter set).
    pub fn backward(&mut self, loss: Var, grads: &mut GradStore) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward on an empty tape"));
        }
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let nodes = &self.nodes;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match self.leaf_grads.get_mut(&Var(i)) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        self.leaf_grads.insert(
                            Var(i),
                            Tensor::from_parts(node.value.shape().to_vec(), g),
                        );
                    }
                },
                Op::Param(id) => {
                    if let Some(acc) = grads.get_mut(*id) {
                        acc.add_assign(&g);
                    }
                }
                Op::EmbedRow { table, row } => {
                    if let Some(acc) = grads.get_mut(*table) {
                        for (a, b) in acc.row_mut(*row).iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bv[p * n..(p + 1) * n];
                                da[i * k + p] += dot(gr, brow);
                            }
                        }
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let x = av[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(gr) {
                                    *d += x * gv;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        axpy(da, 1.0, &g);
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        axpy(db, 1.0, &g);
                    }
                }
                Op::AddBias(a, b) => {
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        axpy(da, 1.0, &g);
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        let cols = db.len();
                        for row in g.chunks(cols) {
                            axpy(db, 1.0, row);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        axpy(da, 1.0, &g);
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        axpy(db, -1.0, &g);
                    }
                }
                Op::Mul(a, b) => {
                    let av = nodes[a.0].value.data();
                    let bv = nodes[b.0].value.data();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((d, gv), y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gv * y;
                        }
                    }
                    if let Some(db) = slot(&mut adj, nodes, *b) {
                        for ((d, gv), x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gv * x;
                        }
                    }
                }
                Op::ScalarMul(s, t) => {
                    let k = nodes[s.0].value.data()[0];
                    let tv = nodes[t.0].value.data();
                    if let Some(ds) = slot(&mut adj, nodes, *s) {
                        ds[0] += dot(&g, tv);
                    }
                    if let Some(dt) = slot(&mut adj, nodes, *t) {
                        axpy(dt, k, &g);
                    }
                }
                Op::Concat(parts) => {
                    let total = node.value.last_dim();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for p in parts {
                        let c = nodes[p.0].value.last_dim();
                        if let Some(dp) = slot(&mut adj, nodes, *p) {
                            for r in 0..rows {
                                axpy(
                                    &mut dp[r * c..(r + 1) * c],
                                    1.0,
                                    &g[r * total + offset..r * total + offset + c],
                                );
                            }
                        }
                        offset += c;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((d, gv), y) in da.iter_mut().zip(&g).zip(y) {
                            *d += gv * y * (1.0 - y);
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((d, gv), y) in da.iter_mut().zip(&g).zip(y) {
                            *d += gv * (1.0 - y * y);
                        }
                    }
                }
                Op::Relu(a) => {
                    let x = nodes[a.0].value.data();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((d, gv), x) in da.iter_mut().zip(&g).zip(x) {
                            if *x > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((d, gv), y) in da.iter_mut().zip(&g).zip(y) {
                            *d += gv * y;
                        }
                    }
                }
                Op::Log(a) => {
                    let x = nodes[a.0].value.data();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((d, gv), x) in da.iter_mut().zip(&g).zip(x) {
                            *d += gv / x;
                        }
                    }
                }
                Op::Softplus(a) => {
                    let x = nodes[a.0].value.data();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((d, gv), x) in da.iter_mut().zip(&g).zip(x) {
                            *d += gv * sigmoid(*x);
                        }
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let cols = node.value.last_dim();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((dr, gr), yr) in da
                            .chunks_mut(cols)
                            .zip(g.chunks(cols))
                            .zip(y.chunks(cols))
                        {
                            let s = dot(gr, yr);
                            for ((d, gv), y) in dr.iter_mut().zip(gr).zip(yr) {
                                *d += y * (gv - s);
                            }
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.data();
                    let cols = node.value.last_dim();
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        for ((dr, gr), yr) in da
                            .chunks_mut(cols)
                            .zip(g.chunks(cols))
                            .zip(y.chunks(cols))
                        {
                            let s: f64 = gr.iter().sum();
                            for ((d, gv), y) in dr.iter_mut().zip(gr).zip(yr) {
                                *d += gv - y.exp() * s;
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        da.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Mean(a) => {
                    if let Some(da) = slot(&mut adj, nodes, *a) {
                        let w = g[0] / da.len() as f64;
                        da.iter_mut().for_each(|d| *d += w);
                    }
                }
                Op::Slice { input, start, len } => {
                    let cols = nodes[input.0].value.last_dim();
                    if let Some(da) = slot(&mut adj, nodes, *input) {
                        for (dr, gr) in da.chunks_mut(cols).zip(g.chunks(*len)) {
                            axpy(&mut dr[*start..*start + *len], 1.0, gr);
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    if let Some(da) = slot(&mut adj, nodes, *logits) {
                        for (j, (d, p)) in da.iter_mut().zip(probs).enumerate() {
                            let onehot = if j == *target { 1.0 } else { 0.0 };
                            *d += g[0] * (p - onehot);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Lazily allocated adjoint buffer of `v`, or `None` when `v` needs no gradient.
fn slot<'a>(
    adj: &'a mut [Option<Vec<f64>>],
    nodes: &[Node<'_>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
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

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    row.iter_mut().for_each(|x| *x /= z);
}
