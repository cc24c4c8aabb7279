//! Named desk-scale experiments, written in the config grammar.
//!
//! All presets use 20 clients with label skew of mean three classes and a
//! fixed round budget. `mnist-*` presets keep roughly 2000 training samples
//! in total instead of 100 per class per client on full MNIST.

use crate::config::ExperimentConfig;
use crate::error::{Result, SimError};

pub const PRESETS: &[(&str, &str)] = &[
    (
        "blobs-skew",
        "dataset = blobs
blob_classes = 10
blob_input_dim = 20
blob_cluster_std = 0.6
clients = 20
n_mean = 3
stdev = 2
rounds = 30
lambda = 1
a = 0.5
",
    ),
    (
        "mnist-skew-n3",
        "dataset = mnist
clients = 20
n_mean = 3
stdev = 2
k_mean = 32
hidden = 128
feature_dim = 50
rounds = 50
",
    ),
    (
        "mnist-skew-n3-mh",
        "dataset = mnist
clients = 20
n_mean = 3
stdev = 2
k_mean = 32
client_hidden = 128;96;64,64;160
feature_dim = 50
rounds = 50
",
    ),
];

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn text(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            SimError::config("preset", None, format!("unknown preset `{name}`; known: {}", names().join(", ")))
        })
}

/// Parses a preset. File checks are skipped so presets resolve even where
/// the data directory is elsewhere; callers validate after overrides.
pub fn load(name: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for line in text(name)?.lines() {
        let (k, v) = line.split_once('=').expect("preset lines are assignments");
        cfg.set(k.trim(), v).map_err(|m| SimError::config(k.trim(), None, m))?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for name in names() {
            let cfg = load(name).unwrap();
            assert_eq!(cfg.clients, 20);
            assert_eq!(cfg.n_mean, 3.0);
        }
        assert!(load("nope").is_err());
    }

    #[test]
    fn blobs_preset_validates() {
        load("blobs-skew").unwrap().validate().unwrap();
    }

    #[test]
    fn heterogeneous_preset_keeps_feature_width() {
        let cfg = load("mnist-skew-n3-mh").unwrap();
        let widths: Vec<_> = (0..4).map(|i| cfg.body_hidden(i).to_vec()).collect();
        assert_eq!(widths, vec![vec![128], vec![96], vec![64, 64], vec![160]]);
        assert!((0..20).all(|i| cfg.model_spec(i).body.feature_dim == 50));
    }
}
