//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles.
//! Parameters are borrowed for the lifetime of the graph, so a forward pass
//! never copies weights. [`Graph::backward`] consumes the graph, walks the
//! nodes in exact reverse order and returns the adjoint of every leaf that
//! was registered with [`Graph::param`].

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    ConcatRows(Var, Var),
    MeanRows(Var),
    SelectRows(Var, Vec<usize>),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    Mse(Var, Var),
    L2Distance(Var, Var),
    Sum(Var),
    Add(Var, Var),
    Scale(Var, f64),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf borrowed from its owner.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// A trainable leaf owned by the graph.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// A borrowed constant; no adjoint is propagated into it.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b), ng))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = self.value(x).add_bias(self.value(b))?;
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::AddBias(x, b), ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).relu()?;
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::Relu(x), ng))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).sigmoid()?;
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::Sigmoid(x), ng))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_rows(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::ConcatRows(a, b), ng))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mean_rows()?;
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::MeanRows(x), ng))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let out = self.value(x).select_rows(rows)?;
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::SelectRows(x, rows.to_vec()), ng))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = self.value(logits).softmax_cross_entropy(labels)?;
        let ng = self.needs(logits);
        Ok(self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let out = self.value(pred).mse(self.value(target))?;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(Cow::Owned(Tensor::scalar(out)), Op::Mse(pred, target), ng))
    }

    pub fn l2_distance(&mut self, u: Var, v: Var) -> Result<Var> {
        let out = self.value(u).l2_distance(self.value(v))?;
        let ng = self.needs(u) || self.needs(v);
        Ok(self.push(Cow::Owned(Tensor::scalar(out)), Op::L2Distance(u, v), ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).sum()?;
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(Tensor::scalar(out)), Op::Sum(x), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).scale(factor)?;
        let ng = self.needs(x);
        Ok(self.push(Cow::Owned(out), Op::Scale(x, factor), ng))
    }

    /// Propagates adjoints from the scalar `root` and returns the gradient of
    /// every trainable leaf. Consumes the graph.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        if root.0 >= self.nodes.len() || !self.nodes[root.0].value.is_scalar() {
            return Err(Error::contract("backward root must be a scalar node of this graph"));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Tensor>> = vec![None; n];
        let mut visited = Vec::with_capacity(root.0 + 1);
        adj[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            visited.push(i);
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                adj[i] = Some(g);
                continue;
            }
            g.ensure_finite("backward")?;
            for (target, grad) in self.local_grads(node, &g)? {
                if !self.nodes[target.0].needs_grad {
                    continue;
                }
                match &mut adj[target.0] {
                    Some(acc) => acc.add_assign_unchecked(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }

        let mut grads = Vec::with_capacity(n);
        for (node, a) in self.nodes.iter().zip(adj) {
            let is_param = matches!(node.op, Op::Leaf) && node.needs_grad;
            grads.push(if is_param {
                Some(a.unwrap_or_else(|| Tensor::zeros(node.value.shape())))
            } else {
                None
            });
        }
        Ok(Gradients { grads, visited })
    }

    fn local_grads(&self, node: &Node<'a>, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    out.push((*a, g.matmul_nt(val(*b))?));
                }
                if needs(*b) {
                    out.push((*b, val(*a).matmul_tn(g)?));
                }
            }
            Op::AddBias(x, b) => {
                if needs(*x) {
                    out.push((*x, g.clone()));
                }
                if needs(*b) {
                    out.push((*b, g.sum_rows()?));
                }
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(val(*x).data()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                out.push((*x, d));
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                for (dv, &s) in d.data_mut().iter_mut().zip(node.value.data()) {
                    *dv *= s * (1.0 - s);
                }
                out.push((*x, d));
            }
            Op::ConcatRows(a, b) => {
                let (m, p, q) = (g.rows(), val(*a).cols(), val(*b).cols());
                let mut da = Vec::with_capacity(m * p);
                let mut db = Vec::with_capacity(m * q);
                for i in 0..m {
                    let row = g.row(i);
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                if needs(*a) {
                    out.push((*a, Tensor::from_shape(Shape::matrix(m, p), da)?));
                }
                if needs(*b) {
                    out.push((*b, Tensor::from_shape(Shape::matrix(m, q), db)?));
                }
            }
            Op::MeanRows(x) => {
                let src = val(*x);
                let m = src.rows();
                let inv = m as f64;
                let mut d = Vec::with_capacity(src.numel());
                for _ in 0..m {
                    d.extend(g.data().iter().map(|v| v / inv));
                }
                out.push((*x, Tensor::from_shape(src.shape(), d)?));
            }
            Op::SelectRows(x, rows) => {
                let src = val(*x);
                let n = src.cols();
                let mut d = Tensor::zeros(src.shape());
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut d.data_mut()[r * n..(r + 1) * n];
                    for (dv, &gv) in dst.iter_mut().zip(g.row(k)) {
                        *dv += gv;
                    }
                }
                out.push((*x, d));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let scale = g.item()? / labels.len() as f64;
                let mut d = probs.clone();
                let c = d.cols();
                for (i, &y) in labels.iter().enumerate() {
                    d.data_mut()[i * c + y] -= 1.0;
                }
                for v in d.data_mut() {
                    *v *= scale;
                }
                out.push((*logits, d));
            }
            Op::Mse(p, t) => {
                let scale = 2.0 * g.item()? / val(*p).numel() as f64;
                let diff: Vec<f64> = val(*p)
                    .data()
                    .iter()
                    .zip(val(*t).data())
                    .map(|(a, b)| (a - b) * scale)
                    .collect();
                let dp = Tensor::from_shape(val(*p).shape(), diff)?;
                if needs(*t) {
                    out.push((*t, dp.scale(-1.0)?));
                }
                if needs(*p) {
                    out.push((*p, dp));
                }
            }
            Op::L2Distance(u, v) => {
                // Subgradient 0 where the distance vanishes.
                let dist = node.value.item()?;
                let scale = if dist > 0.0 { g.item()? / dist } else { 0.0 };
                let diff: Vec<f64> = val(*u)
                    .data()
                    .iter()
                    .zip(val(*v).data())
                    .map(|(a, b)| (a - b) * scale)
                    .collect();
                let du = Tensor::from_shape(val(*u).shape(), diff)?;
                if needs(*v) {
                    out.push((*v, du.scale(-1.0)?));
                }
                if needs(*u) {
                    out.push((*u, du));
                }
            }
            Op::Sum(x) => {
                out.push((*x, Tensor::filled(val(*x).shape(), g.item()?)));
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    out.push((*a, g.clone()));
                }
                if needs(*b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Scale(x, factor) => {
                out.push((*x, g.scale(*factor)?));
            }
        }
        Ok(out)
    }
}

/// Adjoints of the trainable leaves of a consumed graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Moves the gradient of `v` out. Panics if `v` was not a parameter.
    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().expect("gradient requested for a non-parameter node")
    }

    /// Node indices in the order backward visited them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}
