//! Flat `key = value` experiment configuration.
//!
//! One assignment per line. `#` starts a comment, blank lines are ignored,
//! keys may appear at most once and unknown keys are rejected. Lists are
//! comma separated; `client_hidden` is a `;`-separated list of hidden-width
//! lists assigned to clients cyclically. Relative paths resolve against the
//! working directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pfedpm_core::data::{BlobSpec, SkewSpec};
use pfedpm_core::models::{BodySpec, Sgd};
use pfedpm_core::protocol::{ClientModelSpec, InitScope, RoundConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pfedpm,
    Local,
    Fedavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Mnist,
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pfedpm" => Ok(Method::Pfedpm),
            "local" => Ok(Method::Local),
            "fedavg" => Ok(Method::Fedavg),
            _ => Err(format!("expected pfedpm, local or fedavg, got `{s}`")),
        }
    }
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pfedpm => "pfedpm",
            Method::Local => "local",
            Method::Fedavg => "fedavg",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "blobs" => Ok(DatasetKind::Blobs),
            "mnist" => Ok(DatasetKind::Mnist),
            _ => Err(format!("expected blobs or mnist, got `{s}`")),
        }
    }
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Mnist => "mnist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub dataset: DatasetKind,
    pub seed: u64,
    pub out: PathBuf,
    pub mnist_dir: PathBuf,
    pub blobs: BlobSpec,
    pub clients: usize,
    pub n_mean: f64,
    pub k_mean: f64,
    pub stdev: f64,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    /// Per-client body hidden widths, cycled; empty means every client uses
    /// `hidden`.
    pub client_hidden: Vec<Vec<usize>>,
    pub decision_hidden: Vec<usize>,
    pub relation_hidden: usize,
    pub init: InitScope,
    pub a: f64,
    pub lambda: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub relation_lr: f64,
    pub relation_momentum: f64,
    pub relation_epochs: usize,
    pub rounds: usize,
    pub aggregate: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Pfedpm,
            dataset: DatasetKind::Blobs,
            seed: 0,
            out: PathBuf::from("runs/out"),
            mnist_dir: PathBuf::from("data/mnist-5k"),
            blobs: BlobSpec {
                classes: 10,
                input_dim: 20,
                per_class: 300,
                cluster_std: 0.6,
            },
            clients: 20,
            n_mean: 3.0,
            k_mean: 30.0,
            stdev: 2.0,
            feature_dim: 50,
            hidden: vec![128],
            client_hidden: vec![],
            decision_hidden: vec![],
            relation_hidden: 32,
            init: InitScope::Client,
            a: 0.5,
            lambda: 1.0,
            local_epochs: 1,
            batch_size: 10,
            lr: 0.01,
            momentum: 0.5,
            relation_lr: 0.5,
            relation_momentum: 0.5,
            relation_epochs: 1,
            rounds: 30,
            aggregate: true,
        }
    }
}

/// Every key with its meaning, in emission order.
pub const KEYS: &[(&str, &str)] = &[
    ("method", "pfedpm | local | fedavg"),
    ("dataset", "blobs | mnist"),
    ("seed", "master seed for every random stream"),
    ("out", "output directory"),
    ("mnist_dir", "directory holding images-idx3-ubyte and labels-idx1-ubyte"),
    ("blob_classes", "blobs: number of classes"),
    ("blob_input_dim", "blobs: input width"),
    ("blob_per_class", "blobs: samples per class"),
    ("blob_cluster_std", "blobs: per-coordinate noise"),
    ("clients", "number of clients"),
    ("n_mean", "mean classes per client"),
    ("k_mean", "mean training samples per owned class"),
    ("stdev", "spread of classes per client"),
    ("feature_dim", "prototype width d"),
    ("hidden", "body hidden widths"),
    ("client_hidden", "per-client body hidden widths, `;`-separated, cycled"),
    ("decision_hidden", "decision head hidden widths"),
    ("relation_hidden", "relation head hidden width"),
    ("init", "client: per-client initialization | shared: one initialization for all"),
    ("a", "local weight when mixing prototypes, in [0, 1]"),
    ("lambda", "prototype regularizer weight"),
    ("local_epochs", "local epochs per round"),
    ("batch_size", "minibatch size"),
    ("lr", "learning rate of body and decision head"),
    ("momentum", "momentum of body and decision head"),
    ("relation_lr", "learning rate of the relation head"),
    ("relation_momentum", "momentum of the relation head"),
    ("relation_epochs", "relation head epochs per round, 0 disables it"),
    ("rounds", "communication rounds"),
    ("aggregate", "upload and aggregate prototypes (pfedpm only)"),
];

fn parse_num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn parse_widths(v: &str) -> Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|w| parse_num(w.trim())).collect()
}

fn show_widths(w: &[usize]) -> String {
    w.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Assigns one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "method" => self.method = v.parse()?,
            "dataset" => self.dataset = v.parse()?,
            "seed" => self.seed = parse_num(v)?,
            "out" => self.out = PathBuf::from(v),
            "mnist_dir" => self.mnist_dir = PathBuf::from(v),
            "blob_classes" => self.blobs.classes = parse_num(v)?,
            "blob_input_dim" => self.blobs.input_dim = parse_num(v)?,
            "blob_per_class" => self.blobs.per_class = parse_num(v)?,
            "blob_cluster_std" => self.blobs.cluster_std = parse_num(v)?,
            "clients" => self.clients = parse_num(v)?,
            "n_mean" => self.n_mean = parse_num(v)?,
            "k_mean" => self.k_mean = parse_num(v)?,
            "stdev" => self.stdev = parse_num(v)?,
            "feature_dim" => self.feature_dim = parse_num(v)?,
            "hidden" => self.hidden = parse_widths(v)?,
            "client_hidden" => {
                self.client_hidden = if v.is_empty() {
                    vec![]
                } else {
                    v.split(';').map(parse_widths).collect::<Result<_, _>>()?
                }
            }
            "decision_hidden" => self.decision_hidden = parse_widths(v)?,
            "relation_hidden" => self.relation_hidden = parse_num(v)?,
            "init" => {
                self.init = match v {
                    "client" => InitScope::Client,
                    "shared" => InitScope::Shared,
                    _ => return Err(format!("expected client or shared, got `{v}`")),
                }
            }
            "a" => self.a = parse_num(v)?,
            "lambda" => self.lambda = parse_num(v)?,
            "local_epochs" => self.local_epochs = parse_num(v)?,
            "batch_size" => self.batch_size = parse_num(v)?,
            "lr" => self.lr = parse_num(v)?,
            "momentum" => self.momentum = parse_num(v)?,
            "relation_lr" => self.relation_lr = parse_num(v)?,
            "relation_momentum" => self.relation_momentum = parse_num(v)?,
            "relation_epochs" => self.relation_epochs = parse_num(v)?,
            "rounds" => self.rounds = parse_num(v)?,
            "aggregate" => self.aggregate = parse_num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Textual value of one key, parseable by [`ExperimentConfig::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "method" => self.method.name().into(),
            "dataset" => self.dataset.name().into(),
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            "mnist_dir" => self.mnist_dir.display().to_string(),
            "blob_classes" => self.blobs.classes.to_string(),
            "blob_input_dim" => self.blobs.input_dim.to_string(),
            "blob_per_class" => self.blobs.per_class.to_string(),
            "blob_cluster_std" => self.blobs.cluster_std.to_string(),
            "clients" => self.clients.to_string(),
            "n_mean" => self.n_mean.to_string(),
            "k_mean" => self.k_mean.to_string(),
            "stdev" => self.stdev.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "hidden" => show_widths(&self.hidden),
            "client_hidden" => self
                .client_hidden
                .iter()
                .map(|w| show_widths(w))
                .collect::<Vec<_>>()
                .join(";"),
            "decision_hidden" => show_widths(&self.decision_hidden),
            "relation_hidden" => self.relation_hidden.to_string(),
            "init" => match self.init {
                InitScope::Client => "client".into(),
                InitScope::Shared => "shared".into(),
            },
            "a" => self.a.to_string(),
            "lambda" => self.lambda.to_string(),
            "local_epochs" => self.local_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "relation_lr" => self.relation_lr.to_string(),
            "relation_momentum" => self.relation_momentum.to_string(),
            "relation_epochs" => self.relation_epochs.to_string(),
            "rounds" => self.rounds.to_string(),
            "aggregate" => self.aggregate.to_string(),
            _ => return None,
        })
    }

    /// Parses and validates a config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(SimError::config(content, Some(line), "expected `key = value`"));
            };
            let key = key.trim();
            if let Some(first) = seen.insert(key.to_owned(), line) {
                return Err(SimError::config(key, Some(line), format!("duplicate key, first set on line {first}")));
            }
            cfg.set(key, value)
                .map_err(|m| SimError::config(key, Some(line), m))?;
        }
        cfg.validate_with(|k| seen.get(k).copied())?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its resolved value; `parse` of this text yields `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(|_| None)
    }

    fn validate_with(&self, line_of: impl Fn(&str) -> Option<usize>) -> Result<()> {
        let fail = |key: &str, msg: String| Err(SimError::config(key, line_of(key), msg));
        let positive = [
            ("blob_classes", self.blobs.classes),
            ("blob_input_dim", self.blobs.input_dim),
            ("blob_per_class", self.blobs.per_class),
            ("clients", self.clients),
            ("feature_dim", self.feature_dim),
            ("relation_hidden", self.relation_hidden),
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("rounds", self.rounds),
        ];
        for (key, v) in positive {
            if v == 0 {
                return fail(key, "must be at least 1".into());
            }
        }
        if !(0.0..=1.0).contains(&self.a) {
            return fail("a", format!("{} is outside [0, 1]", self.a));
        }
        let non_negative = [
            ("lambda", self.lambda),
            ("stdev", self.stdev),
            ("blob_cluster_std", self.blobs.cluster_std),
        ];
        for (key, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return fail(key, format!("{v} must be finite and non-negative"));
            }
        }
        for (key, v) in [("n_mean", self.n_mean), ("k_mean", self.k_mean)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(key, format!("{v} must be positive"));
            }
        }
        for (key, lr, momentum, mkey) in [
            ("lr", self.lr, self.momentum, "momentum"),
            ("relation_lr", self.relation_lr, self.relation_momentum, "relation_momentum"),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return fail(key, format!("{lr} must be positive"));
            }
            if !(0.0..1.0).contains(&momentum) {
                return fail(mkey, format!("{momentum} is outside [0, 1)"));
            }
        }
        if self.hidden.contains(&0) {
            return fail("hidden", "widths must be at least 1".into());
        }
        if self.decision_hidden.contains(&0) {
            return fail("decision_hidden", "widths must be at least 1".into());
        }
        if self.client_hidden.iter().any(|w| w.contains(&0)) {
            return fail("client_hidden", "widths must be at least 1".into());
        }
        if self.method == Method::Fedavg {
            let first = self.body_hidden(0);
            if (1..self.clients).any(|i| self.body_hidden(i) != first) {
                return fail("client_hidden", "fedavg requires the same body on every client".into());
            }
        }
        if self.method != Method::Pfedpm && !self.aggregate {
            return fail("aggregate", "only meaningful for method = pfedpm".into());
        }
        if self.dataset == DatasetKind::Mnist {
            for f in crate::io::MNIST_FILES {
                let p = self.mnist_dir.join(f);
                if !p.is_file() {
                    return fail("mnist_dir", format!("{} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self.dataset {
            DatasetKind::Blobs => self.blobs.classes,
            DatasetKind::Mnist => 10,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.dataset {
            DatasetKind::Blobs => self.blobs.input_dim,
            DatasetKind::Mnist => 28 * 28,
        }
    }

    pub fn body_hidden(&self, client: usize) -> &[usize] {
        if self.client_hidden.is_empty() {
            &self.hidden
        } else {
            &self.client_hidden[client % self.client_hidden.len()]
        }
    }

    pub fn model_spec(&self, client: usize) -> ClientModelSpec {
        ClientModelSpec {
            body: BodySpec {
                input_dim: self.input_dim(),
                hidden_dims: self.body_hidden(client).to_vec(),
                feature_dim: self.feature_dim,
            },
            decision_hidden: self.decision_hidden.clone(),
            relation_hidden: self.relation_hidden,
            classes: self.classes(),
        }
    }

    pub fn skew(&self) -> SkewSpec {
        SkewSpec {
            clients: self.clients,
            n_mean: self.n_mean,
            k_mean: self.k_mean,
            stdev: self.stdev,
            seed: self.seed,
        }
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            mix: self.a,
            lambda: self.lambda,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            sgd: Sgd {
                lr: self.lr,
                momentum: self.momentum,
            },
            relation_sgd: Sgd {
                lr: self.relation_lr,
                momentum: self.relation_momentum,
            },
            rounds: self.rounds,
            relation_epochs: self.relation_epochs,
            aggregate: self.aggregate,
            seed: self.seed,
        }
    }

    /// Help text listing every key and its default.
    pub fn key_help() -> String {
        let d = ExperimentConfig::default();
        let mut out = String::from("Config keys (default in brackets):\n");
        for (key, help) in KEYS {
            let _ = writeln!(out, "  {key:<18} {help} [{}]", d.get(key).expect("listed key"));
        }
        out
    }
}
