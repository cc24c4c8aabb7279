//! Dataset loading and artifact files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pfedpm_core::data::{mnist_from_idx, synth_blobs, Dataset};
use pfedpm_core::metrics::RoundMetrics;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DatasetKind, ExperimentConfig};
use crate::error::{Context, Result, SimError};

pub const MNIST_FILES: [&str; 2] = ["images-idx3-ubyte", "labels-idx1-ubyte"];

pub const CSV_HEADER: &str = "round,mean_acc_decision,std_acc_decision,mean_acc_relation,std_acc_relation,mean_train_loss,upload_scalars,cum_upload_scalars";

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| SimError::io(path, e))
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| SimError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| SimError::io(path, e))
}

pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let images = dir.join(MNIST_FILES[0]);
    let labels = dir.join(MNIST_FILES[1]);
    let (ib, lb) = (read(&images)?, read(&labels)?);
    mnist_from_idx(&ib, &lb).map_err(|e| SimError::Data {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg.dataset {
        DatasetKind::Blobs => synth_blobs(&cfg.blobs, cfg.seed).context(|| "generating blobs".into()),
        DatasetKind::Mnist => load_mnist(&cfg.mnist_dir),
    }
}

/// Nine significant digits.
fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Per-round metrics, one row per round after a header. Relation columns are
/// empty for rounds without relation-head evaluation.
pub fn metrics_csv(history: &[RoundMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in history {
        let rel = |v: Option<f64>| v.map(sig9).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.round,
            sig9(m.mean_acc_decision),
            sig9(m.std_acc_decision),
            rel(m.mean_acc_relation),
            rel(m.std_acc_relation),
            sig9(m.mean_train_loss),
            m.upload_scalars,
            m.cum_upload_scalars
        );
    }
    out
}

pub fn to_json<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| SimError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = to_json(value, path)?;
    write(path, text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| SimError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read(path)?))
}
