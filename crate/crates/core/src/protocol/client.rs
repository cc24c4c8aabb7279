use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::prototypes::PrototypeSet;
use super::RoundConfig;
use crate::autodiff::{Graph, Var};
use crate::data::{ClientSplit, Dataset};
use crate::models::{Body, BodySpec, DecisionHead, OptimizerState, RelationHead, Sgd};
use crate::rng::{stream, Owner, Purpose, StreamRng};
use crate::tensor::{Shape, Tensor};
use crate::{Error, Result};

/// Architecture of one client's networks.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClientModelSpec {
    pub body: BodySpec,
    /// Hidden widths of the decision head; empty for a single linear layer.
    pub decision_hidden: Vec<usize>,
    pub relation_hidden: usize,
    pub classes: usize,
}

/// Which random streams initialize a client's networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum InitScope {
    /// Every client draws from its own streams.
    #[default]
    Client,
    /// Every client draws from the global streams, so clients with the same
    /// architecture start from identical parameters.
    Shared,
}

/// Rows of a full-dataset forward pass evaluated at once.
const EVAL_CHUNK: usize = 256;

pub struct ClientState {
    pub id: usize,
    pub split: ClientSplit,
    pub body: Body,
    pub decision: DecisionHead,
    pub relation: RelationHead,
    pub body_opt: OptimizerState,
    pub decision_opt: OptimizerState,
    pub relation_opt: OptimizerState,
    /// Prototypes of the owned classes from the latest local pass.
    pub local_protos: PrototypeSet,
    /// Blend of local and global prototypes; covers every class once the
    /// first aggregation has happened.
    pub mixed_protos: PrototypeSet,
    classes: usize,
    shuffle_rng: StreamRng,
    relation_rng: StreamRng,
}

impl ClientState {
    /// Initializes all three networks from the client's own random streams.
    pub fn new(
        split: ClientSplit,
        spec: &ClientModelSpec,
        sgd: Sgd,
        relation_sgd: Sgd,
        seed: u64,
    ) -> Result<Self> {
        Self::with_init(split, spec, sgd, relation_sgd, seed, InitScope::Client)
    }

    pub fn with_init(
        split: ClientSplit,
        spec: &ClientModelSpec,
        sgd: Sgd,
        relation_sgd: Sgd,
        seed: u64,
        scope: InitScope,
    ) -> Result<Self> {
        let owner = match scope {
            InitScope::Client => Owner::Client(split.client),
            InitScope::Shared => Owner::Global,
        };
        let d = spec.body.feature_dim;
        let body = Body::init(spec.body.clone(), &mut stream(seed, owner, Purpose::BodyInit))?;
        let decision = DecisionHead::init(
            d,
            &spec.decision_hidden,
            spec.classes,
            &mut stream(seed, owner, Purpose::DecisionInit),
        );
        let relation = RelationHead::init(
            d,
            spec.relation_hidden,
            &mut stream(seed, owner, Purpose::RelationInit),
        );
        Self::from_parts(split, body, decision, relation, sgd, relation_sgd, seed)
    }

    pub fn from_parts(
        split: ClientSplit,
        body: Body,
        decision: DecisionHead,
        relation: RelationHead,
        sgd: Sgd,
        relation_sgd: Sgd,
        seed: u64,
    ) -> Result<Self> {
        sgd.validate()?;
        relation_sgd.validate()?;
        let d = body.feature_dim();
        if decision.net().input_dim() != d || relation.net().input_dim() != 2 * d {
            return Err(Error::contract(alloc::format!(
                "heads do not accept feature width {d}"
            )));
        }
        if relation.net().output_dim() != 1 {
            return Err(Error::contract("relation head must output one score"));
        }
        let owner = Owner::Client(split.client);
        Ok(ClientState {
            id: split.client,
            classes: decision.classes(),
            body_opt: OptimizerState::for_mlp(sgd, body.net()),
            decision_opt: OptimizerState::for_mlp(sgd, decision.net()),
            relation_opt: OptimizerState::for_mlp(relation_sgd, relation.net()),
            local_protos: PrototypeSet::new(d),
            mixed_protos: PrototypeSet::new(d),
            shuffle_rng: stream(seed, owner, Purpose::LocalShuffle),
            relation_rng: stream(seed, owner, Purpose::RelationShuffle),
            split,
            body,
            decision,
            relation,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.body.feature_dim()
    }

    /// Body plus decision head parameter count (what FedAvg would upload).
    pub fn shared_param_count(&self) -> usize {
        self.body.net().param_count() + self.decision.net().param_count()
    }

    /// Features of the given samples, without recording gradients.
    pub fn features(&self, ds: &Dataset, indices: &[usize]) -> Result<Tensor> {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for chunk in indices.chunks(EVAL_CHUNK) {
            let (x, _) = ds.gather(chunk)?;
            data.extend_from_slice(self.body.eval(&x)?.data());
        }
        Tensor::matrix(indices.len(), d, data)
    }

    /// Per-class mean feature over the whole training split.
    pub fn compute_local_prototypes(&self, ds: &Dataset) -> Result<PrototypeSet> {
        if self.split.train.is_empty() {
            return Err(Error::contract(alloc::format!(
                "client {} has no training samples",
                self.id
            )));
        }
        let feats = self.features(ds, &self.split.train)?;
        let d = self.feature_dim();
        let mut sums: BTreeMap<usize, (Vec<f64>, u64)> = BTreeMap::new();
        for (row, &i) in self.split.train.iter().enumerate() {
            let (acc, n) = sums
                .entry(ds.labels()[i])
                .or_insert_with(|| (alloc::vec![0.0; d], 0));
            for (a, &v) in acc.iter_mut().zip(feats.row(row)) {
                *a += v;
            }
            *n += 1;
        }
        let mut protos = PrototypeSet::new(d);
        for (label, (mut acc, n)) in sums {
            for v in &mut acc {
                *v /= n as f64;
            }
            protos.insert(label, Tensor::vector(acc), n)?;
        }
        Ok(protos)
    }

    /// Cross-entropy plus `λ ·` mean distance between each class's batch-mean
    /// feature and its mixed prototype, over classes present in the batch.
    /// Mixed prototypes enter as constants. Returns the per-batch losses.
    ///
    /// Before the first aggregation there are no mixed prototypes and the
    /// regularizer is skipped.
    pub fn local_update(&mut self, ds: &Dataset, cfg: &RoundConfig) -> Result<Vec<f64>> {
        let lambda = if self.mixed_protos.is_empty() {
            0.0
        } else {
            cfg.lambda
        };
        self.body_opt.set_sgd(cfg.sgd);
        self.decision_opt.set_sgd(cfg.sgd);
        let mut losses = Vec::new();
        let mut order = self.split.train.clone();
        for _ in 0..cfg.local_epochs {
            order.shuffle(&mut self.shuffle_rng);
            for batch in order.chunks(cfg.batch_size) {
                let (x, y) = ds.gather(batch)?;
                let (loss, body_grads, head_grads) =
                    self.regularized_loss_and_grads(&x, &y, lambda)?;
                self.body_opt.step(self.body.net_mut().params_mut(), &body_grads)?;
                self.decision_opt
                    .step(self.decision.net_mut().params_mut(), &head_grads)?;
                losses.push(loss);
            }
        }
        Ok(losses)
    }

    /// Value of the local objective on one batch, without updating anything.
    pub fn regularized_loss(&self, x: &Tensor, y: &[usize], lambda: f64) -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _, _) = self.record_local_loss(&mut g, x, y, lambda)?;
        Ok(g.value(loss).item()?)
    }

    fn regularized_loss_and_grads(
        &self,
        x: &Tensor,
        y: &[usize],
        lambda: f64,
    ) -> Result<(f64, Vec<Tensor>, Vec<Tensor>)> {
        let mut g = Graph::new();
        let (loss, body_params, head_params) = self.record_local_loss(&mut g, x, y, lambda)?;
        let value = g.value(loss).item()?;
        let mut grads = g.backward(loss)?;
        let body_grads = body_params.into_iter().map(|v| grads.take(v)).collect();
        let head_grads = head_params.into_iter().map(|v| grads.take(v)).collect();
        Ok((value, body_grads, head_grads))
    }

    fn record_local_loss<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: &Tensor,
        y: &[usize],
        lambda: f64,
    ) -> Result<(Var, Vec<Var>, Vec<Var>)> {
        let xv = g.input(x.clone());
        let (feats, body_params) = self.body.forward(g, xv)?;
        let (logits, head_params) = self.decision.forward(g, feats)?;
        let mut loss = g.softmax_cross_entropy(logits, y)?;
        if lambda != 0.0 {
            if let Some(reg) = self.record_regularizer(g, feats, y)? {
                let weighted = g.scale(reg, lambda)?;
                loss = g.add(loss, weighted)?;
            }
        }
        Ok((loss, body_params, head_params))
    }

    fn record_regularizer<'a>(
        &'a self,
        g: &mut Graph<'a>,
        feats: Var,
        y: &[usize],
    ) -> Result<Option<Var>> {
        let mut rows_by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (row, &label) in y.iter().enumerate() {
            rows_by_class.entry(label).or_default().push(row);
        }
        let mut total: Option<Var> = None;
        let mut terms = 0usize;
        for (label, rows) in &rows_by_class {
            let Some(proto) = self.mixed_protos.get(*label) else {
                continue;
            };
            let members = g.select_rows(feats, rows)?;
            let batch_mean = g.mean_rows(members)?;
            let target = g.constant(&proto.vector);
            let dist = g.l2_distance(batch_mean, target)?;
            total = Some(match total {
                Some(t) => g.add(t, dist)?,
                None => dist,
            });
            terms += 1;
        }
        match total {
            Some(t) => Ok(Some(g.scale(t, 1.0 / terms as f64)?)),
            None => Ok(None),
        }
    }

    /// `[m·C × 2d]` rows `[h_s ∥ mixed_j]` for every sample `s` and class `j`.
    pub fn relation_pairs(&self, feats: &Tensor) -> Result<Tensor> {
        let protos = self.mixed_protos.matrix(self.classes).map_err(|_| {
            Error::protocol(alloc::format!(
                "client {} has mixed prototypes for {} of {} classes",
                self.id,
                self.mixed_protos.len(),
                self.classes
            ))
        })?;
        let (m, d, c) = (feats.rows(), feats.cols(), self.classes);
        let mut data = Vec::with_capacity(m * c * 2 * d);
        for s in 0..m {
            for j in 0..c {
                data.extend_from_slice(feats.row(s));
                data.extend_from_slice(protos.row(j));
            }
        }
        Tensor::matrix(m * c, 2 * d, data)
    }

    /// Relation scores `[m × C]` of the given samples against every class.
    pub fn relation_scores(&self, feats: &Tensor) -> Result<Tensor> {
        let pairs = self.relation_pairs(feats)?;
        let scores = self.relation.eval(&pairs)?;
        Tensor::matrix(feats.rows(), self.classes, scores.into_data())
    }

    /// Mean squared error between relation scores and one-hot targets.
    pub fn relation_loss(&self, feats: &Tensor, y: &[usize]) -> Result<f64> {
        let scores = self.relation_scores(feats)?;
        scores.mse(&one_hot(y, self.classes)?)
    }

    /// Trains the relation head against the mixed prototypes with the body
    /// frozen. Returns the per-batch losses.
    pub fn train_relation(&mut self, ds: &Dataset, cfg: &RoundConfig) -> Result<Vec<f64>> {
        if !self.mixed_protos.covers(self.classes) {
            return Err(Error::protocol(alloc::format!(
                "client {} has mixed prototypes for {} of {} classes",
                self.id,
                self.mixed_protos.len(),
                self.classes
            )));
        }
        self.relation_opt.set_sgd(cfg.relation_sgd);
        let mut losses = Vec::new();
        let mut order = self.split.train.clone();
        for _ in 0..cfg.relation_epochs {
            order.shuffle(&mut self.relation_rng);
            for batch in order.chunks(cfg.batch_size) {
                let (x, y) = ds.gather(batch)?;
                let feats = self.body.eval(&x)?;
                let pairs = self.relation_pairs(&feats)?;
                let targets = Tensor::matrix(pairs.rows(), 1, one_hot(&y, self.classes)?.into_data())?;
                let (loss, grads) = {
                    let mut g = Graph::new();
                    let pv = g.input(pairs);
                    let (scores, params) = self.relation.forward(&mut g, pv)?;
                    let tv = g.input(targets);
                    let loss = g.mse(scores, tv)?;
                    let value = g.value(loss).item()?;
                    let mut grads = g.backward(loss)?;
                    (value, params.into_iter().map(|v| grads.take(v)).collect::<Vec<_>>())
                };
                self.relation_opt
                    .step(self.relation.net_mut().params_mut(), &grads)?;
                losses.push(loss);
            }
        }
        Ok(losses)
    }
}

fn one_hot(y: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = alloc::vec![0.0; y.len() * classes];
    for (s, &label) in y.iter().enumerate() {
        if label >= classes {
            return Err(Error::Label { label, classes });
        }
        data[s * classes + label] = 1.0;
    }
    Tensor::from_shape(Shape::matrix(y.len(), classes), data)
}
