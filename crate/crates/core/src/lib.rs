//! Prototype-exchange personalized federated learning.
//!
//! Clients train a feature extractor ("body") with a classification head and
//! upload per-class mean features (prototypes) instead of model weights. The
//! server averages prototypes weighted by sample counts, clients blend them
//! with their own using a personalization coefficient, and a relation head
//! learns to score (feature, prototype) pairs.
//!
//! This crate is `no_std` + `alloc`. File IO, the CLI and the thread pool
//! live in the companion `pfedpm` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod autodiff;
pub mod data;
mod error;
pub mod metrics;
pub mod models;
pub mod protocol;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
