use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::rng::{stream, Owner, Purpose};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Gaussian clusters centred on distinct corners of a hypercube.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlobSpec {
    pub classes: usize,
    pub input_dim: usize,
    pub per_class: usize,
    pub cluster_std: f64,
}

/// Number of binary code bits needed to give each class its own corner.
fn code_bits(classes: usize) -> usize {
    let mut bits = 1;
    while (1usize << bits) < classes {
        bits += 1;
    }
    bits
}

/// Corner of class `class`: coordinate `k` is bit `k mod bits` of the class
/// code, so each code bit is repeated across the input dimensions.
pub(crate) fn blob_center(class: usize, classes: usize, input_dim: usize) -> Vec<f64> {
    let bits = code_bits(classes);
    (0..input_dim)
        .map(|k| ((class >> (k % bits)) & 1) as f64)
        .collect()
}

/// Samples are ordered class-major: all of class 0, then class 1, ...
pub fn synth_blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    let BlobSpec {
        classes,
        input_dim,
        per_class,
        cluster_std,
    } = *spec;
    if classes == 0 || input_dim == 0 || per_class == 0 {
        return Err(Error::contract("blob classes, input_dim and per_class must be positive"));
    }
    if !(cluster_std >= 0.0 && cluster_std.is_finite()) {
        return Err(Error::contract("cluster_std must be a non-negative real"));
    }
    if input_dim < code_bits(classes) {
        return Err(Error::contract(alloc::format!(
            "{input_dim} dimensions cannot give {classes} classes distinct corners"
        )));
    }
    let mut rng = stream(seed, Owner::Global, Purpose::Dataset);
    let mut data = Vec::with_capacity(classes * per_class * input_dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let center = blob_center(class, classes, input_dim);
        for _ in 0..per_class {
            for &c in &center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(c + cluster_std * z);
            }
            labels.push(class);
        }
    }
    let features = Tensor::matrix(classes * per_class, input_dim, data)?;
    Dataset::new(features, labels, classes)
}
