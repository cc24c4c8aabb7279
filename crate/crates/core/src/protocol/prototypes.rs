//! Per-class prototypes: upload format, server aggregation, client mixing.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Bytes of one class entry on the wire: `u32` label, `u64` count, `d` reals.
pub fn entry_bytes(dim: usize) -> u64 {
    4 + 8 + 8 * dim as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    /// Length `d`.
    pub vector: Tensor,
    /// Samples behind the vector; always at least 1.
    pub count: u64,
}

/// Class label → prototype, all of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    dim: usize,
    entries: BTreeMap<usize, Prototype>,
}

impl PrototypeSet {
    pub fn new(dim: usize) -> Self {
        PrototypeSet {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, label: usize, vector: Tensor, count: u64) -> Result<()> {
        if vector.shape().rank() != 1 || vector.numel() != self.dim {
            return Err(Error::protocol(alloc::format!(
                "prototype for class {label} has shape {:?}, expected [{}]",
                vector.shape(),
                self.dim
            )));
        }
        if count == 0 {
            return Err(Error::protocol(alloc::format!(
                "prototype for class {label} has zero count"
            )));
        }
        self.entries.insert(label, Prototype { vector, count });
        Ok(())
    }

    pub fn get(&self, label: usize) -> Option<&Prototype> {
        self.entries.get(&label)
    }

    pub fn contains(&self, label: usize) -> bool {
        self.entries.contains_key(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    /// Entries in ascending label order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Prototype)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    /// True when every label in `0..classes` is present.
    pub fn covers(&self, classes: usize) -> bool {
        (0..classes).all(|c| self.entries.contains_key(&c))
    }

    /// Real scalars carried on the wire: vector plus count per class.
    pub fn upload_scalars(&self) -> u64 {
        self.entries.len() as u64 * (self.dim as u64 + 1)
    }

    pub fn upload_bytes(&self) -> u64 {
        self.entries.len() as u64 * entry_bytes(self.dim)
    }

    /// Stacks the prototypes of classes `0..classes` into `[classes × d]`.
    pub fn matrix(&self, classes: usize) -> Result<Tensor> {
        let mut data = Vec::with_capacity(classes * self.dim);
        for c in 0..classes {
            let p = self
                .get(c)
                .ok_or_else(|| Error::protocol(alloc::format!("no prototype for class {c}")))?;
            data.extend_from_slice(p.vector.data());
        }
        Tensor::matrix(classes, self.dim, data)
    }
}

/// What a client sends to the server each round.
#[derive(Debug, Clone, PartialEq)]
pub struct UploadMsg {
    pub client: usize,
    pub prototypes: PrototypeSet,
}

/// Per class, each owning client's weight `|D_ij| / N_j`, in ascending
/// client order.
pub fn aggregation_weights(uploads: &[UploadMsg]) -> BTreeMap<usize, Vec<(usize, f64)>> {
    let ordered = ordered(uploads);
    let mut totals: BTreeMap<usize, u64> = BTreeMap::new();
    for u in &ordered {
        for (label, p) in u.prototypes.iter() {
            *totals.entry(label).or_insert(0) += p.count;
        }
    }
    let mut weights: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for u in &ordered {
        for (label, p) in u.prototypes.iter() {
            let w = p.count as f64 / totals[&label] as f64;
            weights.entry(label).or_default().push((u.client, w));
        }
    }
    weights
}

fn ordered(uploads: &[UploadMsg]) -> Vec<&UploadMsg> {
    let mut v: Vec<&UploadMsg> = uploads.iter().collect();
    v.sort_by_key(|u| u.client);
    v
}

/// Count-weighted mean of the uploaded prototypes of each class.
///
/// `global_j = Σ_i (|D_ij| / N_j) · local_ij` with `N_j = Σ_i |D_ij|`, summed
/// in ascending client order. The stored count is `N_j`.
pub fn aggregate_global(uploads: &[UploadMsg]) -> Result<PrototypeSet> {
    let first = uploads
        .first()
        .ok_or_else(|| Error::protocol("aggregation needs at least one upload"))?;
    let dim = first.prototypes.dim();
    if let Some(bad) = uploads.iter().find(|u| u.prototypes.dim() != dim) {
        return Err(Error::protocol(alloc::format!(
            "client {} uploaded width {}, client {} uploaded width {dim}",
            bad.client,
            bad.prototypes.dim(),
            first.client
        )));
    }
    let ordered = ordered(uploads);
    for pair in ordered.windows(2) {
        if pair[0].client == pair[1].client {
            return Err(Error::protocol(alloc::format!(
                "client {} uploaded twice",
                pair[0].client
            )));
        }
    }

    let mut sums: BTreeMap<usize, (Vec<f64>, u64)> = BTreeMap::new();
    let weights = aggregation_weights(uploads);
    for u in &ordered {
        for (label, p) in u.prototypes.iter() {
            let w = weights[&label]
                .iter()
                .find(|(c, _)| *c == u.client)
                .map(|&(_, w)| w)
                .expect("weight for every upload");
            let (acc, n) = sums.entry(label).or_insert_with(|| (vec![0.0; dim], 0));
            for (a, &v) in acc.iter_mut().zip(p.vector.data()) {
                *a += w * v;
            }
            *n += p.count;
        }
    }

    let mut global = PrototypeSet::new(dim);
    for (label, (acc, n)) in sums {
        global.insert(label, Tensor::vector(acc), n)?;
    }
    Ok(global)
}

/// `a·local + (1 − a)·global` on owned classes, `global` elsewhere.
pub fn mix_prototypes(local: &PrototypeSet, global: &PrototypeSet, a: f64) -> Result<PrototypeSet> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::contract(alloc::format!("mixing weight a = {a} outside [0, 1]")));
    }
    if local.dim() != global.dim() && !local.is_empty() {
        return Err(Error::protocol(alloc::format!(
            "local width {} differs from global width {}",
            local.dim(),
            global.dim()
        )));
    }
    let mut mixed = PrototypeSet::new(global.dim());
    for (label, lp) in local.iter() {
        let gp = global.get(label).ok_or_else(|| {
            Error::protocol(alloc::format!("class {label} owned locally is missing globally"))
        })?;
        let v: Vec<f64> = lp
            .vector
            .data()
            .iter()
            .zip(gp.vector.data())
            .map(|(&l, &g)| a * l + (1.0 - a) * g)
            .collect();
        mixed.insert(label, Tensor::vector(v), lp.count)?;
    }
    for (label, gp) in global.iter() {
        if !local.contains(label) {
            mixed.insert(label, gp.vector.clone(), gp.count)?;
        }
    }
    Ok(mixed)
}
