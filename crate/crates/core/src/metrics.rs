//! Evaluation, communication accounting and convergence diagnostics.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::protocol::{entry_bytes, ClientState, UploadMsg};
use crate::tensor::{argmax, softmax_in_place};
use crate::{Error, Result};

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mut acc = 0.0;
    for &v in values {
        acc += v;
    }
    let mean = acc / n;
    let mut var = 0.0;
    for &v in values {
        var += (v - mean) * (v - mean);
    }
    (mean, libm::sqrt(var / n))
}

fn accuracy(predictions: impl Iterator<Item = usize>, truth: &[usize]) -> f64 {
    let correct = predictions.zip(truth).filter(|(p, y)| p == *y).count();
    correct as f64 / truth.len() as f64
}

/// Fraction of test samples whose decision-head argmax matches the label.
pub fn evaluate_decision(client: &ClientState, ds: &Dataset) -> Result<f64> {
    let test = &client.split.test;
    if test.is_empty() {
        return Err(Error::contract(alloc::format!(
            "client {} has an empty test split",
            client.id
        )));
    }
    let feats = client.features(ds, test)?;
    let logits = client.decision.eval(&feats)?;
    let truth: Vec<usize> = test.iter().map(|&i| ds.labels()[i]).collect();
    let preds = (0..logits.rows()).map(|r| argmax(logits.row(r)).unwrap_or(0));
    Ok(accuracy(preds, &truth))
}

/// Fraction of test samples whose softmaxed relation scores against the
/// mixed prototypes peak at the true class.
pub fn evaluate_relation(client: &ClientState, ds: &Dataset) -> Result<f64> {
    let test = &client.split.test;
    if test.is_empty() {
        return Err(Error::contract(alloc::format!(
            "client {} has an empty test split",
            client.id
        )));
    }
    let feats = client.features(ds, test)?;
    let scores = client.relation_scores(&feats)?;
    let truth: Vec<usize> = test.iter().map(|&i| ds.labels()[i]).collect();
    let preds = (0..scores.rows()).map(|r| {
        let mut row = scores.row(r).to_vec();
        softmax_in_place(&mut row);
        argmax(&row).unwrap_or(0)
    });
    Ok(accuracy(preds, &truth))
}

/// Upload accounting for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CommEntry {
    pub round: usize,
    /// Real scalars each client uploaded.
    pub client_scalars: Vec<u64>,
    /// Modeled wire bytes each client uploaded.
    pub client_bytes: Vec<u64>,
    /// Scalars each client would upload under FedAvg (body + decision head).
    pub fedavg_scalars: Vec<u64>,
}

/// Prototype upload of clients owning `owned_classes[i]` classes at feature
/// width `feature_dim`, against FedAvg uploads of `fedavg_params[i]`.
pub fn comm_cost(
    round: usize,
    owned_classes: &[usize],
    feature_dim: usize,
    fedavg_params: &[u64],
) -> CommEntry {
    CommEntry {
        round,
        client_scalars: owned_classes
            .iter()
            .map(|&n| n as u64 * (feature_dim as u64 + 1))
            .collect(),
        client_bytes: owned_classes
            .iter()
            .map(|&n| n as u64 * entry_bytes(feature_dim))
            .collect(),
        fedavg_scalars: fedavg_params.to_vec(),
    }
}

impl CommEntry {
    pub fn from_uploads(round: usize, uploads: &[UploadMsg], clients: &[ClientState]) -> Self {
        CommEntry {
            round,
            client_scalars: uploads.iter().map(|u| u.prototypes.upload_scalars()).collect(),
            client_bytes: uploads.iter().map(|u| u.prototypes.upload_bytes()).collect(),
            fedavg_scalars: fedavg_counts(clients),
        }
    }

    /// A round in which nobody uploads.
    pub fn silent(round: usize, clients: &[ClientState]) -> Self {
        CommEntry {
            round,
            client_scalars: alloc::vec![0; clients.len()],
            client_bytes: alloc::vec![0; clients.len()],
            fedavg_scalars: fedavg_counts(clients),
        }
    }

    /// A FedAvg round: every client uploads its full body + decision head.
    pub fn fedavg(round: usize, clients: &[ClientState]) -> Self {
        let counts = fedavg_counts(clients);
        CommEntry {
            round,
            client_bytes: counts.iter().map(|c| 8 * c).collect(),
            client_scalars: counts.clone(),
            fedavg_scalars: counts,
        }
    }

    pub fn uploaded(&self) -> u64 {
        self.client_scalars.iter().sum()
    }

    pub fn uploaded_bytes(&self) -> u64 {
        self.client_bytes.iter().sum()
    }

    pub fn fedavg_equivalent(&self) -> u64 {
        self.fedavg_scalars.iter().sum()
    }

    /// FedAvg-equivalent scalars per uploaded scalar; `None` for a silent round.
    pub fn ratio(&self) -> Option<f64> {
        let up = self.uploaded();
        (up > 0).then(|| self.fedavg_equivalent() as f64 / up as f64)
    }
}

fn fedavg_counts(clients: &[ClientState]) -> Vec<u64> {
    clients.iter().map(|c| c.shared_param_count() as u64).collect()
}

/// Per-round communication history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    entries: Vec<CommEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: CommEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[CommEntry] {
        &self.entries
    }

    pub fn total_uploaded(&self) -> u64 {
        self.entries.iter().map(CommEntry::uploaded).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.iter().map(CommEntry::uploaded_bytes).sum()
    }

    /// Running upload totals after each round.
    pub fn cumulative(&self) -> Vec<u64> {
        let mut acc = 0;
        self.entries
            .iter()
            .map(|e| {
                acc += e.uploaded();
                acc
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub decision_acc: Vec<f64>,
    pub relation_acc: Option<Vec<f64>>,
    pub mean_acc_decision: f64,
    pub std_acc_decision: f64,
    pub mean_acc_relation: Option<f64>,
    pub std_acc_relation: Option<f64>,
    pub client_train_loss: Vec<f64>,
    pub mean_train_loss: f64,
    pub upload_scalars: u64,
    pub cum_upload_scalars: u64,
    pub comm: CommEntry,
}

impl RoundMetrics {
    /// `previous_cumulative` is the upload total before this round.
    pub fn new(
        round: usize,
        decision_acc: Vec<f64>,
        relation_acc: Option<Vec<f64>>,
        client_train_loss: Vec<f64>,
        comm: CommEntry,
        previous_cumulative: u64,
    ) -> Self {
        let (mean_acc_decision, std_acc_decision) = mean_std(&decision_acc);
        let rel = relation_acc.as_deref().map(mean_std);
        let (mean_train_loss, _) = mean_std(&client_train_loss);
        let upload_scalars = comm.uploaded();
        RoundMetrics {
            round,
            mean_acc_relation: rel.map(|r| r.0),
            std_acc_relation: rel.map(|r| r.1),
            decision_acc,
            relation_acc,
            mean_acc_decision,
            std_acc_decision,
            client_train_loss,
            mean_train_loss,
            upload_scalars,
            cum_upload_scalars: previous_cumulative + upload_scalars,
            comm,
        }
    }
}

/// Fraction of round-to-round transitions in which the mean local loss
/// strictly decreased. `None` for fewer than two rounds.
pub fn loss_decrease_diagnostic(mean_losses: &[f64]) -> Option<f64> {
    if mean_losses.len() < 2 {
        return None;
    }
    let down = mean_losses.windows(2).filter(|w| w[1] < w[0]).count();
    Some(down as f64 / (mean_losses.len() - 1) as f64)
}
