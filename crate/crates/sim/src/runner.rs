//! End-to-end runs, sweeps and replays.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pfedpm_core::data::{client_class_counts, partition_label_skew, ClientSplit, Dataset};
use pfedpm_core::metrics::{loss_decrease_diagnostic, RoundMetrics};
use pfedpm_core::protocol::{
    run_fedavg_baseline, run_local_baseline, run_pfedpm, ClientState, Executor, ServerState,
};
use pfedpm_core::rng::{stream_id, Owner, Purpose};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, ExperimentConfig, Method};
use crate::error::{Context, Result, SimError};
use crate::io;
use crate::parallel::Pool;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PARTITION_FILE: &str = "partition.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Files covered by manifest checksums.
pub const CHECKED_FILES: [&str; 3] = [METRICS_FILE, SUMMARY_FILE, PARTITION_FILE];

pub const SWEEP_PARAMS: [&str; 4] = ["a", "lambda", "stdev", "n_mean"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    /// `global` or `client:<id>`.
    pub owner: String,
    pub purpose: Purpose,
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub seed: u64,
    /// Resolved configuration in the config-file grammar.
    pub config: String,
    pub streams: Vec<StreamEntry>,
    /// File name → SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub dataset: DatasetKind,
    pub rounds: usize,
    pub clients: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub final_mean_acc_decision: f64,
    pub final_std_acc_decision: f64,
    pub final_mean_acc_relation: Option<f64>,
    pub final_std_acc_relation: Option<f64>,
    pub client_acc_decision: Vec<f64>,
    pub client_acc_relation: Option<Vec<f64>>,
    pub total_upload_scalars: u64,
    pub total_upload_bytes: u64,
    /// Scalars FedAvg would upload in one round with these clients.
    pub fedavg_scalars_per_round: u64,
    /// FedAvg scalars per uploaded scalar in the final round.
    pub final_round_upload_ratio: Option<f64>,
    pub loss_decrease_fraction: Option<f64>,
}

/// Everything a run produces, before anything is written.
#[derive(Debug, Clone)]
pub struct Run {
    pub history: Vec<RoundMetrics>,
    pub splits: Vec<ClientSplit>,
    pub summary: Summary,
}

pub fn build_clients(cfg: &ExperimentConfig, splits: &[ClientSplit]) -> Result<Vec<ClientState>> {
    let rc = cfg.round_config();
    splits
        .iter()
        .map(|s| {
            ClientState::with_init(
                s.clone(),
                &cfg.model_spec(s.client),
                rc.sgd,
                rc.relation_sgd,
                cfg.seed,
                cfg.init,
            )
                .context(|| format!("building client {}", s.client))
        })
        .collect()
}

pub fn partition(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<ClientSplit>> {
    partition_label_skew(ds, &cfg.skew()).context(|| "partitioning".into())
}

/// Runs the configured method on an already loaded dataset.
pub fn simulate<E: Executor>(cfg: &ExperimentConfig, ds: &Dataset, exec: &E) -> Result<Run> {
    cfg.validate()?;
    let splits = partition(cfg, ds)?;
    let mut clients = build_clients(cfg, &splits)?;
    let rc = cfg.round_config();
    let ctx = || format!("running {}", cfg.method.name());
    let history = match cfg.method {
        Method::Pfedpm => {
            let mut server = ServerState::new(cfg.feature_dim);
            run_pfedpm(&mut server, &mut clients, ds, &rc, exec).context(ctx)?
        }
        Method::Local => run_local_baseline(&mut clients, ds, &rc, exec).context(ctx)?,
        Method::Fedavg => run_fedavg_baseline(&mut clients, ds, &rc, exec).context(ctx)?,
    };
    let summary = summarize(cfg, &splits, &history);
    Ok(Run {
        history,
        splits,
        summary,
    })
}

fn summarize(cfg: &ExperimentConfig, splits: &[ClientSplit], history: &[RoundMetrics]) -> Summary {
    let last = history.last().expect("at least one round");
    let losses: Vec<f64> = history.iter().map(|m| m.mean_train_loss).collect();
    Summary {
        method: cfg.method,
        dataset: cfg.dataset,
        rounds: history.len(),
        clients: splits.len(),
        train_samples: splits.iter().map(|s| s.train.len()).sum(),
        test_samples: splits.iter().map(|s| s.test.len()).sum(),
        final_mean_acc_decision: last.mean_acc_decision,
        final_std_acc_decision: last.std_acc_decision,
        final_mean_acc_relation: last.mean_acc_relation,
        final_std_acc_relation: last.std_acc_relation,
        client_acc_decision: last.decision_acc.clone(),
        client_acc_relation: last.relation_acc.clone(),
        total_upload_scalars: last.cum_upload_scalars,
        total_upload_bytes: history.iter().map(|m| m.comm.uploaded_bytes()).sum(),
        fedavg_scalars_per_round: last.comm.fedavg_equivalent(),
        final_round_upload_ratio: last.comm.ratio(),
        loss_decrease_fraction: loss_decrease_diagnostic(&losses),
    }
}

/// Random streams the configured run draws from.
pub fn stream_table(cfg: &ExperimentConfig) -> Vec<StreamEntry> {
    let mut out = vec![];
    let mut push = |owner: Owner, purpose: Purpose| {
        let name = match owner {
            Owner::Global => "global".to_owned(),
            Owner::Client(i) => format!("client:{i}"),
        };
        out.push(StreamEntry {
            owner: name,
            purpose,
            id: stream_id(owner, purpose),
        });
    };
    if cfg.dataset == DatasetKind::Blobs {
        push(Owner::Global, Purpose::Dataset);
    }
    push(Owner::Global, Purpose::Partition);
    if cfg.method == Method::Fedavg {
        push(Owner::Global, Purpose::ServerInit);
    }
    for i in 0..cfg.clients {
        for p in [
            Purpose::BodyInit,
            Purpose::DecisionInit,
            Purpose::RelationInit,
            Purpose::LocalShuffle,
            Purpose::RelationShuffle,
        ] {
            push(Owner::Client(i), p);
        }
    }
    out
}

/// Writes the run's artifacts into `dir` and returns the manifest.
pub fn write_run(cfg: &ExperimentConfig, run: &Run, dir: &Path) -> Result<RunManifest> {
    io::create_dir(dir)?;
    let files: [(&str, String); 3] = [
        (METRICS_FILE, io::metrics_csv(&run.history)),
        (SUMMARY_FILE, io::to_json(&run.summary, &dir.join(SUMMARY_FILE))?),
        (PARTITION_FILE, io::to_json(&run.splits, &dir.join(PARTITION_FILE))?),
    ];
    let mut outputs = BTreeMap::new();
    for (name, text) in &files {
        io::write(&dir.join(name), text)?;
        outputs.insert((*name).to_owned(), io::sha256_hex(text.as_bytes()));
    }
    let config = cfg.to_text();
    io::write(&dir.join(CONFIG_FILE), &config)?;
    let manifest = RunManifest {
        software: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        seed: cfg.seed,
        config,
        streams: stream_table(cfg),
        outputs,
    };
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Loads the data, runs, and writes everything into `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<(Run, RunManifest)> {
    cfg.validate()?;
    let ds = io::load_dataset(cfg)?;
    let pool = Pool::new(threads)?;
    let run = simulate(cfg, &ds, &pool)?;
    let manifest = write_run(cfg, &run, &cfg.out)?;
    Ok((run, manifest))
}

/// Re-runs a manifest into `out` and checks every checksummed output.
pub fn replay(manifest_path: &Path, out: &Path, threads: usize) -> Result<RunManifest> {
    let recorded: RunManifest = io::read_json(manifest_path)?;
    let mut cfg = ExperimentConfig::parse(&recorded.config)?;
    cfg.out = out.to_path_buf();
    let (_, fresh) = run_experiment(&cfg, threads)?;
    for (name, sum) in &recorded.outputs {
        match fresh.outputs.get(name) {
            Some(s) if s == sum => {}
            Some(s) => {
                return Err(SimError::Replay(format!("{name}: recorded {sum}, replayed {s}")));
            }
            None => return Err(SimError::Replay(format!("{name} was not produced"))),
        }
    }
    Ok(fresh)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub dir: PathBuf,
    pub summary: Summary,
}

/// One independent run per value of `param`, each in `<out>/<param>=<value>`,
/// plus a combined CSV keyed by the value.
pub fn sweep(cfg: &ExperimentConfig, param: &str, values: &[f64], threads: usize) -> Result<Vec<SweepPoint>> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(SimError::config(
            "param",
            None,
            format!("`{param}` cannot be swept; choose one of {}", SWEEP_PARAMS.join(", ")),
        ));
    }
    if values.is_empty() {
        return Err(SimError::config("values", None, "sweep needs at least one value"));
    }
    cfg.validate()?;
    let ds = io::load_dataset(cfg)?;
    let pool = Pool::new(threads)?;
    io::create_dir(&cfg.out)?;
    let mut combined = format!("{param},{}\n", io::CSV_HEADER);
    let mut points = vec![];
    for &v in values {
        let value = v.to_string();
        let mut point = cfg.clone();
        point
            .set(param, &value)
            .map_err(|m| SimError::config(param, None, m))?;
        point.out = cfg.out.join(format!("{param}={value}"));
        point.validate()?;
        let run = simulate(&point, &ds, &pool)?;
        write_run(&point, &run, &point.out)?;
        for row in io::metrics_csv(&run.history).lines().skip(1) {
            let _ = writeln!(combined, "{value},{row}");
        }
        points.push(SweepPoint {
            value,
            dir: point.out,
            summary: run.summary,
        });
    }
    io::write(&cfg.out.join(SWEEP_FILE), combined)?;
    Ok(points)
}

/// Human-readable per-client partition table.
pub fn describe_partition(ds: &Dataset, splits: &[ClientSplit]) -> String {
    let mut out = String::from("client  train  test  classes (train count per class)\n");
    for s in splits {
        let counts = client_class_counts(s, ds);
        let classes: Vec<String> = counts.iter().map(|(c, n)| format!("{c}:{n}")).collect();
        let _ = writeln!(
            out,
            "{:>6}  {:>5}  {:>4}  {}",
            s.client,
            s.train.len(),
            s.test.len(),
            classes.join(" ")
        );
    }
    let train: usize = splits.iter().map(|s| s.train.len()).sum();
    let test: usize = splits.iter().map(|s| s.test.len()).sum();
    let _ = writeln!(out, "total   {train:>5}  {test:>4}");
    out
}
