use alloc::vec::Vec;

use super::{check_feature_dims, collect, mean, ClientState, Executor, RoundConfig};
use crate::data::Dataset;
use crate::metrics::{evaluate_decision, CommEntry, RoundMetrics};
use crate::models::{Body, DecisionHead};
use crate::rng::{stream, Owner, Purpose};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Every client trains body + decision head on its own data with plain
/// cross-entropy and never communicates.
pub fn run_local_baseline<E: Executor>(
    clients: &mut [ClientState],
    ds: &Dataset,
    cfg: &RoundConfig,
    exec: &E,
) -> Result<Vec<RoundMetrics>> {
    let cfg = RoundConfig {
        lambda: 0.0,
        aggregate: false,
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let losses = collect(exec.map_clients(clients, |c| c.local_update(ds, &cfg)))?;
        let acc = collect(exec.map_clients(clients, |c| evaluate_decision(c, ds)))?;
        let train_loss = losses.iter().map(|l| mean(l)).collect();
        history.push(RoundMetrics::new(
            round + 1,
            acc,
            None,
            train_loss,
            CommEntry::silent(round, clients),
            0,
        ));
    }
    Ok(history)
}

/// `Σ_i (w_i / Σ w) · params_i`, parameter by parameter, summed in the given
/// order.
pub fn fedavg_average(models: &[(u64, Vec<&Tensor>)]) -> Result<Vec<Tensor>> {
    let Some((_, first)) = models.first() else {
        return Err(Error::contract("cannot average zero models"));
    };
    let total: u64 = models.iter().map(|(w, _)| *w).sum();
    if total == 0 {
        return Err(Error::contract("model weights sum to zero"));
    }
    for (_, params) in models {
        let same = params.len() == first.len()
            && params.iter().zip(first).all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(Error::contract("FedAvg requires identical architectures"));
        }
    }
    let mut out: Vec<Tensor> = first.iter().map(|t| Tensor::zeros_like(t)).collect();
    for (w, params) in models {
        let share = *w as f64 / total as f64;
        for (acc, p) in out.iter_mut().zip(params) {
            for (a, &v) in acc.data_mut().iter_mut().zip(p.data()) {
                *a += share * v;
            }
        }
    }
    for t in &out {
        t.ensure_finite("fedavg_average")?;
    }
    Ok(out)
}

fn shared_params(c: &ClientState) -> Vec<&Tensor> {
    c.body.net().params().chain(c.decision.net().params()).collect()
}

fn assign_shared(c: &mut ClientState, params: &[Tensor]) {
    let mut src = params.iter();
    let ClientState { body, decision, .. } = c;
    for dst in body
        .net_mut()
        .params_mut()
        .into_iter()
        .chain(decision.net_mut().params_mut())
    {
        dst.clone_from(src.next().expect("parameter count checked"));
    }
}

/// Clients start from one server-initialized model, train locally with
/// cross-entropy, and the server replaces every client's body + decision
/// head with the training-size-weighted average each round.
pub fn run_fedavg_baseline<E: Executor>(
    clients: &mut [ClientState],
    ds: &Dataset,
    cfg: &RoundConfig,
    exec: &E,
) -> Result<Vec<RoundMetrics>> {
    let cfg = RoundConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    cfg.validate()?;
    let Some(first) = clients.first() else {
        return Err(Error::contract("FedAvg needs at least one client"));
    };
    let body_widths = first.body.net().widths();
    let head_widths = first.decision.net().widths();
    if let Some(c) = clients
        .iter()
        .find(|c| c.body.net().widths() != body_widths || c.decision.net().widths() != head_widths)
    {
        return Err(Error::contract(alloc::format!(
            "FedAvg cannot average heterogeneous architectures (client {} differs from client {})",
            c.id,
            first.id
        )));
    }
    check_feature_dims(clients, first.feature_dim())?;

    let mut init_rng = stream(cfg.seed, Owner::Global, Purpose::ServerInit);
    let body = Body::init(first.body.spec().clone(), &mut init_rng)?;
    let hidden = &head_widths[1..head_widths.len() - 1];
    let head = DecisionHead::init(first.feature_dim(), hidden, first.classes(), &mut init_rng);
    let global: Vec<Tensor> = body
        .net()
        .params()
        .chain(head.net().params())
        .cloned()
        .collect();
    for c in clients.iter_mut() {
        assign_shared(c, &global);
    }

    let mut history: Vec<RoundMetrics> = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let losses = collect(exec.map_clients(clients, |c| c.local_update(ds, &cfg)))?;
        let comm = CommEntry::fedavg(round, clients);
        let averaged = {
            let models: Vec<(u64, Vec<&Tensor>)> = clients
                .iter()
                .map(|c| (c.split.train.len() as u64, shared_params(c)))
                .collect();
            fedavg_average(&models)?
        };
        for c in clients.iter_mut() {
            assign_shared(c, &averaged);
        }
        let acc = collect(exec.map_clients(clients, |c| evaluate_decision(c, ds)))?;
        let train_loss = losses.iter().map(|l| mean(l)).collect();
        let cumulative = history.last().map_or(0, |m| m.cum_upload_scalars);
        history.push(RoundMetrics::new(round + 1, acc, None, train_loss, comm, cumulative));
    }
    Ok(history)
}
