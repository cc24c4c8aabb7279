//! The three trainable networks and the optimizer.
//!
//! * [`Body`]: feature extractor, input → `feature_dim`, ReLU hidden layers,
//!   linear output.
//! * [`DecisionHead`]: features → class logits.
//! * [`RelationHead`]: `[feature ∥ prototype]` → similarity score in (0, 1).
//!
//! Hidden widths of the body may differ between clients; `feature_dim` may
//! not, since prototypes from every client are averaged together.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use crate::autodiff::{Graph, Var};
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// Default width of the prototype / feature space.
pub const DEFAULT_FEATURE_DIM: usize = 50;
/// Default hidden width of the relation head.
pub const DEFAULT_RELATION_HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[fan_in × fan_out]`
    pub weight: Tensor,
    /// `[fan_out]`
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(Shape::matrix(fan_in, fan_out)),
            bias: Tensor::zeros(Shape::vector(fan_out)),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Linear {
            weight: Tensor::from_shape(Shape::matrix(fan_in, fan_out), data)
                .expect("glorot shape"),
            bias: Tensor::zeros(Shape::vector(fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Dense layers with ReLU between them and no activation after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer boundary: input, hidden..., output.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::dimension(
                    "mlp",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    /// Layer boundary widths, input first.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(Linear::fan_in).collect();
        w.push(self.output_dim());
        w
    }

    /// Parameters in canonical order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::numel).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().rank() != 2 || x.cols() != self.input_dim() {
            return Err(Error::dimension("mlp_forward", x.shape(), self.input_dim()));
        }
        Ok(())
    }

    /// Records the forward pass on `g`; returns the output and the parameter
    /// handles in canonical order.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<(Var, Vec<Var>)> {
        self.check_input(g.value(x))?;
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(&layer.weight);
            let b = g.param(&layer.bias);
            params.push(w);
            params.push(b);
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok((h, params))
    }

    /// Forward pass without recording.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?.add_bias(&layer.bias)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BodySpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
}

impl BodySpec {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.feature_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::contract("body dimensions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    spec: BodySpec,
    net: Mlp,
}

impl Body {
    pub fn init<R: Rng + ?Sized>(spec: BodySpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let net = Mlp::glorot(&spec.widths(), rng);
        Ok(Body { spec, net })
    }

    pub fn from_seed(spec: BodySpec, seed: u64) -> Result<Self> {
        Self::init(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn zeros(spec: BodySpec) -> Result<Self> {
        spec.validate()?;
        let net = Mlp::zeros(&spec.widths());
        Ok(Body { spec, net })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        let w = net.widths();
        if w.len() < 2 {
            return Err(Error::contract("body needs at least one layer"));
        }
        let spec = BodySpec {
            input_dim: w[0],
            hidden_dims: w[1..w.len() - 1].to_vec(),
            feature_dim: w[w.len() - 1],
        };
        Ok(Body { spec, net })
    }

    pub fn spec(&self) -> &BodySpec {
        &self.spec
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<(Var, Vec<Var>)> {
        self.net.forward(g, x)
    }

    /// Features `[m × feature_dim]` for inputs `[m × input_dim]`.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        self.net.eval(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionHead {
    net: Mlp,
}

impl DecisionHead {
    /// `hidden` may be empty for a single linear layer.
    pub fn init<R: Rng + ?Sized>(
        feature_dim: usize,
        hidden: &[usize],
        classes: usize,
        rng: &mut R,
    ) -> Self {
        DecisionHead {
            net: Mlp::glorot(&head_widths(feature_dim, hidden, classes), rng),
        }
    }

    pub fn zeros(feature_dim: usize, hidden: &[usize], classes: usize) -> Self {
        DecisionHead {
            net: Mlp::zeros(&head_widths(feature_dim, hidden, classes)),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        DecisionHead { net }
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, h: Var) -> Result<(Var, Vec<Var>)> {
        self.net.forward(g, h)
    }

    /// Logits `[m × classes]`.
    pub fn eval(&self, h: &Tensor) -> Result<Tensor> {
        self.net.eval(h)
    }
}

fn head_widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Scores concatenated `[feature ∥ prototype]` rows through
/// `2d → hidden → 1` followed by a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHead {
    net: Mlp,
}

impl RelationHead {
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, hidden: usize, rng: &mut R) -> Self {
        RelationHead {
            net: Mlp::glorot(&[2 * feature_dim, hidden, 1], rng),
        }
    }

    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        RelationHead {
            net: Mlp::zeros(&[2 * feature_dim, hidden, 1]),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        RelationHead { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, pairs: Var) -> Result<(Var, Vec<Var>)> {
        let (logit, params) = self.net.forward(g, pairs)?;
        Ok((g.sigmoid(logit)?, params))
    }

    /// Scores `[m × 1]`, each in (0, 1).
    pub fn eval(&self, pairs: &Tensor) -> Result<Tensor> {
        self.net.eval(pairs)?.sigmoid()
    }
}

/// Heavy-ball SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

impl Sgd {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Velocity buffers for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    sgd: Sgd,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new<'t>(sgd: Sgd, params: impl IntoIterator<Item = &'t Tensor>) -> Self {
        OptimizerState {
            sgd,
            velocity: params.into_iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn for_mlp(sgd: Sgd, net: &Mlp) -> Self {
        Self::new(sgd, net.params())
    }

    pub fn sgd(&self) -> Sgd {
        self.sgd
    }

    /// Changes the hyperparameters; velocities are kept.
    pub fn set_sgd(&mut self, sgd: Sgd) {
        self.sgd = sgd;
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// `v ← momentum·v + g; p ← p − lr·v` for every parameter.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::contract(alloc::format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::contract(alloc::format!(
                    "parameter {:?}, gradient {:?} and velocity {:?} shapes differ",
                    p.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
        }
        let Sgd { lr, momentum } = self.sgd;
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = momentum * *vv + gv;
                *pv -= lr * *vv;
            }
            p.ensure_finite("sgd_step")?;
        }
        Ok(())
    }
}
