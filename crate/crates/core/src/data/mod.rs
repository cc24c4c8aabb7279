//! Datasets and label-skew partitioning.

mod blobs;
mod idx;
mod partition;

pub use blobs::{synth_blobs, BlobSpec};
pub use idx::{mnist_from_idx, parse_idx_images, parse_idx_labels, IdxImages, IMAGE_MAGIC, LABEL_MAGIC};
pub use partition::{client_class_counts, partition_label_skew, ClientSplit, SkewSpec};

use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Immutable labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape().rank() != 2 || features.rows() != labels.len() {
            return Err(Error::dimension("dataset", features.shape(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Label { label: bad, classes });
        }
        Ok(Dataset {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    /// Copies the given samples, in order, into a feature matrix and a label list.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.select_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }
}
