//! The prototype-exchange round protocol and the Local / FedAvg baselines.
//!
//! One round, for every client in parallel unless noted:
//!
//! 1. local update of body + decision head against last round's mixed
//!    prototypes,
//! 2. fresh local prototypes over the full training split,
//! 3. upload,
//! 4. server aggregation (sequential, ascending client id) and broadcast,
//! 5. mixing of local and global prototypes,
//! 6. relation-head training against the new mixed prototypes.

mod baselines;
mod client;
mod prototypes;

pub use baselines::{fedavg_average, run_fedavg_baseline, run_local_baseline};
pub use client::{ClientModelSpec, ClientState, InitScope};
pub use prototypes::{
    aggregate_global, aggregation_weights, entry_bytes, mix_prototypes, Prototype, PrototypeSet,
    UploadMsg,
};

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::metrics::{evaluate_decision, evaluate_relation, CommEntry, RoundMetrics};
use crate::models::Sgd;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundConfig {
    /// Weight of the local prototype when mixing, in `[0, 1]`.
    pub mix: f64,
    /// Weight of the prototype-distance regularizer.
    pub lambda: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub sgd: Sgd,
    pub relation_sgd: Sgd,
    pub rounds: usize,
    pub relation_epochs: usize,
    /// When false clients never upload and mix only with themselves.
    pub aggregate: bool,
    pub seed: u64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        let sgd = Sgd {
            lr: 0.01,
            momentum: 0.5,
        };
        RoundConfig {
            mix: 0.5,
            lambda: 1.0,
            local_epochs: 1,
            batch_size: 10,
            sgd,
            relation_sgd: sgd,
            rounds: 30,
            relation_epochs: 1,
            aggregate: true,
            seed: 0,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::contract(alloc::format!("a = {} outside [0, 1]", self.mix)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract("lambda must be non-negative"));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("local_epochs and batch_size must be at least 1"));
        }
        self.sgd.validate()?;
        self.relation_sgd.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_protos: PrototypeSet,
    pub round: usize,
}

impl ServerState {
    pub fn new(dim: usize) -> Self {
        ServerState {
            global_protos: PrototypeSet::new(dim),
            round: 0,
        }
    }
}

/// Runs per-client work. Implementations may run clients concurrently but
/// must return results in client order.
pub trait Executor {
    fn map_clients<T, F>(&self, clients: &mut [ClientState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut ClientState) -> T + Sync + Send;
}

/// Runs clients one after another on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_clients<T, F>(&self, clients: &mut [ClientState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut ClientState) -> T + Sync + Send,
    {
        clients.iter_mut().map(f).collect()
    }
}

pub(crate) fn collect<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for &v in values {
        acc += v;
    }
    acc / values.len() as f64
}

/// One full round. `cumulative` is the upload total before this round.
pub fn run_round<E: Executor>(
    server: &mut ServerState,
    clients: &mut [ClientState],
    ds: &Dataset,
    cfg: &RoundConfig,
    exec: &E,
    cumulative: u64,
) -> Result<RoundMetrics> {
    cfg.validate()?;
    let losses = collect(exec.map_clients(clients, |c| c.local_update(ds, cfg)))?;

    let uploads = collect(exec.map_clients(clients, |c| {
        c.local_protos = c.compute_local_prototypes(ds)?;
        Ok(UploadMsg {
            client: c.id,
            prototypes: c.local_protos.clone(),
        })
    }))?;

    let comm = if cfg.aggregate {
        server.global_protos = aggregate_global(&uploads)?;
        CommEntry::from_uploads(server.round, &uploads, clients)
    } else {
        CommEntry::silent(server.round, clients)
    };

    let global = &server.global_protos;
    collect(exec.map_clients(clients, |c| {
        c.mixed_protos = if cfg.aggregate {
            mix_prototypes(&c.local_protos, global, cfg.mix)?
        } else {
            c.local_protos.clone()
        };
        Ok(())
    }))?;

    let relation_ready = clients.iter().all(|c| c.mixed_protos.covers(c.classes()));
    if cfg.relation_epochs > 0 && relation_ready {
        collect(exec.map_clients(clients, |c| c.train_relation(ds, cfg)))?;
    }

    let decision_acc = collect(exec.map_clients(clients, |c| evaluate_decision(c, ds)))?;
    let relation_acc = if relation_ready {
        Some(collect(exec.map_clients(clients, |c| evaluate_relation(c, ds)))?)
    } else {
        None
    };
    let train_loss: Vec<f64> = losses.iter().map(|l| mean(l)).collect();
    server.round += 1;
    Ok(RoundMetrics::new(
        server.round,
        decision_acc,
        relation_acc,
        train_loss,
        comm,
        cumulative,
    ))
}

/// `cfg.rounds` rounds of the protocol.
pub fn run_pfedpm<E: Executor>(
    server: &mut ServerState,
    clients: &mut [ClientState],
    ds: &Dataset,
    cfg: &RoundConfig,
    exec: &E,
) -> Result<Vec<RoundMetrics>> {
    check_feature_dims(clients, server.global_protos.dim())?;
    let mut history: Vec<RoundMetrics> = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let cumulative = history.last().map_or(0, |m| m.cum_upload_scalars);
        history.push(run_round(server, clients, ds, cfg, exec, cumulative)?);
    }
    Ok(history)
}

fn check_feature_dims(clients: &[ClientState], dim: usize) -> Result<()> {
    if let Some(c) = clients.iter().find(|c| c.feature_dim() != dim) {
        return Err(Error::contract(alloc::format!(
            "client {} has feature width {}, server expects {dim}",
            c.id,
            c.feature_dim()
        )));
    }
    Ok(())
}
