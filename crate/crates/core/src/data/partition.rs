//! Label-distribution-skew partitioning.
//!
//! Client `i` receives `n_i = clamp(round(n_mean + N(0, stdev)), 1, C)`
//! classes drawn uniformly without replacement. For each owned class it
//! receives `k_ij = clamp(round(k_mean + N(0, stdev·k_mean/n_mean)), 1, pool)`
//! training samples plus `floor(k_ij / 4)` test samples, so the test share of
//! each class is `floor(total / 5)` (20%, at least one from five samples up).
//! Samples of a class are handed out without replacement until its pool is
//! exhausted; the pool is then reshuffled and reused.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::rng::{stream, Owner, Purpose, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkewSpec {
    pub clients: usize,
    pub n_mean: f64,
    pub k_mean: f64,
    pub stdev: f64,
    pub seed: u64,
}

impl SkewSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::contract("at least one client is required"));
        }
        if !(self.n_mean >= 1.0 && self.n_mean <= classes as f64) {
            return Err(Error::contract(alloc::format!(
                "n_mean {} outside [1, {classes}]",
                self.n_mean
            )));
        }
        if !(self.k_mean >= 1.0 && self.k_mean.is_finite()) {
            return Err(Error::contract("k_mean must be at least 1"));
        }
        if !(self.stdev >= 0.0 && self.stdev.is_finite()) {
            return Err(Error::contract("stdev must be non-negative"));
        }
        Ok(())
    }
}

/// One client's share of a [`Dataset`]; indices point into the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClientSplit {
    pub client: usize,
    /// Ascending.
    pub classes: Vec<usize>,
    /// Ascending.
    pub train: Vec<usize>,
    /// Ascending.
    pub test: Vec<usize>,
}

struct ClassPool {
    order: Vec<usize>,
    cursor: usize,
}

impl ClassPool {
    /// Appends `count` indices not already in `out`, reshuffling when the
    /// pool runs dry. `out.len() + count` must not exceed the pool size.
    fn draw(&mut self, count: usize, rng: &mut StreamRng, out: &mut Vec<usize>) {
        let start = out.len();
        while out.len() - start < count {
            if self.cursor == self.order.len() {
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            let idx = self.order[self.cursor];
            self.cursor += 1;
            if !out.contains(&idx) {
                out.push(idx);
            }
        }
    }
}

fn noisy_round(rng: &mut StreamRng, mean: f64, std: f64, lo: usize, hi: usize) -> usize {
    let z: f64 = rng.sample(StandardNormal);
    let v = libm::round(mean + std * z);
    if v < lo as f64 {
        lo
    } else if v > hi as f64 {
        hi
    } else {
        v as usize
    }
}

pub fn partition_label_skew(ds: &Dataset, spec: &SkewSpec) -> Result<Vec<ClientSplit>> {
    let classes = ds.classes();
    if classes == 0 || ds.is_empty() {
        return Err(Error::contract("cannot partition an empty dataset"));
    }
    spec.validate(classes)?;

    let mut rng = stream(spec.seed, Owner::Global, Purpose::Partition);
    let mut pools: Vec<ClassPool> = (0..classes)
        .map(|_| ClassPool {
            order: Vec::new(),
            cursor: 0,
        })
        .collect();
    for (i, &y) in ds.labels().iter().enumerate() {
        pools[y].order.push(i);
    }
    for pool in &mut pools {
        pool.order.shuffle(&mut rng);
    }
    let available: Vec<usize> = (0..classes).filter(|&c| !pools[c].order.is_empty()).collect();
    if available.is_empty() {
        return Err(Error::contract("dataset has no labelled samples"));
    }

    let k_std = spec.stdev * spec.k_mean / spec.n_mean;
    let mut splits = Vec::with_capacity(spec.clients);
    for client in 0..spec.clients {
        let n = noisy_round(&mut rng, spec.n_mean, spec.stdev, 1, available.len());
        let mut owned = available.clone();
        let (chosen, _) = owned.partial_shuffle(&mut rng, n);
        let mut owned = chosen.to_vec();
        owned.sort_unstable();

        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut drawn_per_class = Vec::with_capacity(owned.len());
        for &class in &owned {
            let pool = &mut pools[class];
            let size = pool.order.len();
            let k = noisy_round(&mut rng, spec.k_mean, k_std, 1, size);
            let total = (k + k / 4).min(size);
            let mut drawn = Vec::with_capacity(total);
            pool.draw(total, &mut rng, &mut drawn);
            let n_test = total / 5;
            test.extend_from_slice(&drawn[..n_test]);
            train.extend_from_slice(&drawn[n_test..]);
            drawn_per_class.push((class, drawn));
        }

        // Every client keeps at least one test sample when it can.
        if test.is_empty() {
            let (class, drawn) = drawn_per_class
                .iter()
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
                .expect("at least one owned class");
            let pool = &mut pools[*class];
            if drawn.len() < pool.order.len() {
                let mut extra = drawn.clone();
                pool.draw(1, &mut rng, &mut extra);
                test.push(extra[extra.len() - 1]);
            } else if drawn.len() >= 2 {
                let moved = drawn[drawn.len() - 1];
                train.retain(|&i| i != moved);
                test.push(moved);
            }
        }

        train.sort_unstable();
        test.sort_unstable();
        splits.push(ClientSplit {
            client,
            classes: owned,
            train,
            test,
        });
    }
    Ok(splits)
}

/// Training-label histogram of one client.
pub fn client_class_counts(split: &ClientSplit, ds: &Dataset) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &i in &split.train {
        *counts.entry(ds.labels()[i]).or_insert(0) += 1;
    }
    counts
}
