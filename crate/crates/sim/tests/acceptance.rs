//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use pfedpm::config::{ExperimentConfig, Method};
use pfedpm::runner::{self, Run, RunManifest, METRICS_FILE};
use pfedpm::{io, presets};
use pfedpm_core::data::Dataset;
use pfedpm_core::metrics::{comm_cost, loss_decrease_diagnostic};
use pfedpm_core::models::{OptimizerState, RelationHead};
use pfedpm_core::protocol::{
    aggregate_global, aggregation_weights, mix_prototypes, run_local_baseline, run_pfedpm,
    run_round, ClientState, RoundConfig, Sequential, ServerState,
};

const GRAD_INSTANCES: usize = 100;
const GRAD_TOLERANCE: f64 = 1e-5;
const AGG_INSTANCES: usize = 50;
const AGG_TOLERANCE: f64 = 1e-12;
const MIX_TOLERANCE: f64 = 1e-15;
const DEGENERACY_ROUNDS: usize = 5;
const INITIAL_RELATION_LOSS: f64 = 0.25;
const MIN_RATIO: f64 = 50.0;
const MIN_RATIO_SMALL: f64 = 100.0;
const SMALL_OWNED: usize = 5;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const DIRECTIONAL_SLACK: f64 = 0.005;
const DIRECTIONAL_WINS: usize = 3;
const MNIST_MIN_ACC: f64 = 0.85;
const RELATION_GAP: f64 = 0.05;
const LOSS_DECREASE_MIN: f64 = 0.8;
const THREADS: usize = 4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k")
}

fn blobs_config(seed: u64, method: Method) -> ExperimentConfig {
    let mut cfg = presets::load("blobs-skew").unwrap();
    cfg.seed = seed;
    cfg.method = method;
    cfg
}

fn mnist_config() -> ExperimentConfig {
    let mut cfg = presets::load("mnist-skew-n3").unwrap();
    cfg.mnist_dir = mnist_dir();
    cfg
}

fn param_bits(c: &ClientState) -> Vec<u64> {
    c.body
        .net()
        .params()
        .chain(c.decision.net().params())
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn clients(cfg: &ExperimentConfig, ds: &Dataset) -> Vec<ClientState> {
    let splits = runner::partition(cfg, ds).unwrap();
    runner::build_clients(cfg, &splits).unwrap()
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let report = common::gradient_report(GRAD_INSTANCES, 2024);
    let (op, worst) = report
        .iter()
        .cloned()
        .fold(("", 0.0), |acc, (op, e)| if e > acc.1 { (op, e) } else { acc });
    let el = t.elapsed();
    check(
        worst < GRAD_TOLERANCE && within(el, 30),
        format!(
            "worst relative error {worst:.2e} ({op}) over {} ops x {GRAD_INSTANCES}, limit {GRAD_TOLERANCE:e}; {:.1?}",
            report.len(),
            el
        ),
    )
}

fn aggregation() -> Outcome {
    let t = Instant::now();
    let mut rng = common::rng(77);
    let (mut err, mut wsum): (f64, f64) = (0.0, 0.0);
    let mut counts_ok = true;
    for _ in 0..AGG_INSTANCES {
        let uploads = common::random_uploads(&mut rng, 10, 10, 50);
        let global = aggregate_global(&uploads).unwrap();
        for (label, want, total) in common::aggregate_oracle(&uploads) {
            let got = global.get(label).unwrap();
            counts_ok &= got.count == total;
            err = err.max(common::max_abs_diff(got.vector.data(), &want));
        }
        for (_, w) in aggregation_weights(&uploads) {
            wsum = wsum.max((w.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs());
        }
    }
    let el = t.elapsed();
    check(
        err <= AGG_TOLERANCE && wsum <= AGG_TOLERANCE && counts_ok && within(el, 5),
        format!("max |global - oracle| {err:.1e}, max |sum w - 1| {wsum:.1e}, limit {AGG_TOLERANCE:e}; {el:.1?}"),
    )
}

fn mixing() -> Outcome {
    let t = Instant::now();
    let mut rng = common::rng(78);
    let mut worst: f64 = 0.0;
    for _ in 0..AGG_INSTANCES {
        let uploads = common::random_uploads(&mut rng, 6, 10, 50);
        let global = aggregate_global(&uploads).unwrap();
        for u in &uploads {
            let local = &u.prototypes;
            let one = mix_prototypes(local, &global, 1.0).unwrap();
            let zero = mix_prototypes(local, &global, 0.0).unwrap();
            let half = mix_prototypes(local, &global, 0.5).unwrap();
            for (label, g) in global.iter() {
                let gv = g.vector.data();
                worst = worst.max(common::max_abs_diff(zero.get(label).unwrap().vector.data(), gv));
                let l = local.get(label).map_or(gv, |p| p.vector.data());
                worst = worst.max(common::max_abs_diff(one.get(label).unwrap().vector.data(), l));
                let want: Vec<f64> = l.iter().zip(gv).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
                worst = worst.max(common::max_abs_diff(half.get(label).unwrap().vector.data(), &want));
            }
        }
    }
    let el = t.elapsed();
    check(
        worst <= MIX_TOLERANCE && within(el, 1),
        format!("max deviation {worst:.1e} at a in {{0, 0.5, 1}}, limit {MIX_TOLERANCE:e}; {el:.1?}"),
    )
}

fn degeneracy() -> Outcome {
    let t = Instant::now();
    let mut cfg = blobs_config(0, Method::Pfedpm);
    cfg.rounds = DEGENERACY_ROUNDS;
    let ds = io::load_dataset(&cfg).unwrap();
    let base = cfg.round_config();
    let degenerate = RoundConfig {
        mix: 1.0,
        lambda: 0.0,
        aggregate: false,
        ..base.clone()
    };
    let mut a = clients(&cfg, &ds);
    let mut b = clients(&cfg, &ds);
    run_pfedpm(&mut ServerState::new(cfg.feature_dim), &mut a, &ds, &degenerate, &Sequential).unwrap();
    run_local_baseline(&mut b, &ds, &base, &Sequential).unwrap();
    let differing = a.iter().zip(&b).filter(|(x, y)| param_bits(x) != param_bits(y)).count();
    let el = t.elapsed();
    check(
        differing == 0 && within(el, 60),
        format!(
            "{differing} of {} clients differ bitwise after {DEGENERACY_ROUNDS} rounds; {el:.1?}",
            a.len()
        ),
    )
}

fn relation_freeze() -> Outcome {
    let t = Instant::now();
    let cfg = blobs_config(0, Method::Pfedpm);
    let ds = io::load_dataset(&cfg).unwrap();
    let mut cs = clients(&cfg, &ds);
    let mut rc = cfg.round_config();
    rc.relation_epochs = 0;
    run_round(&mut ServerState::new(cfg.feature_dim), &mut cs, &ds, &rc, &Sequential, 0).unwrap();
    rc.relation_epochs = 1;
    let (mut unchanged, mut exact) = (0, 0);
    for c in &mut cs {
        c.relation = RelationHead::zeros(cfg.feature_dim, cfg.relation_hidden);
        c.relation_opt = OptimizerState::for_mlp(rc.relation_sgd, c.relation.net());
        let before = param_bits(c);
        let trace = c.train_relation(&ds, &rc).unwrap();
        unchanged += usize::from(param_bits(c) == before);
        exact += usize::from(trace[0] == INITIAL_RELATION_LOSS);
    }
    let n = cs.len();
    let el = t.elapsed();
    check(
        unchanged == n && exact == n && within(el, 10),
        format!(
            "body+decision unchanged on {unchanged}/{n} clients, initial loss exactly {INITIAL_RELATION_LOSS} on {exact}/{n}; {el:.1?}"
        ),
    )
}

fn communication() -> Outcome {
    let t = Instant::now();
    let cfg = mnist_config();
    let ds = io::load_dataset(&cfg).unwrap();
    let cs = clients(&cfg, &ds);
    let d = cfg.feature_dim;
    let widths = [784, 128, 50, 10];
    let oracle: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let params: Vec<u64> = cs.iter().map(|c| c.shared_param_count() as u64).collect();
    let owned: Vec<usize> = cs.iter().map(|c| c.split.classes.len()).collect();
    let ratio = comm_cost(0, &owned, d, &params).ratio().unwrap();
    let small_worst = (1..=SMALL_OWNED)
        .map(|n| comm_cost(0, &[n], d, &[oracle as u64]).ratio().unwrap())
        .fold(f64::INFINITY, f64::min);
    let el = t.elapsed();
    check(
        params.iter().all(|&p| p == oracle as u64)
            && ratio > MIN_RATIO
            && small_worst > MIN_RATIO_SMALL
            && within(el, 1),
        format!(
            "{oracle} shared parameters per client; FedAvg/pFedPM per round {ratio:.0}x (> {MIN_RATIO}x); worst single client with <= {SMALL_OWNED} classes {small_worst:.0}x (> {MIN_RATIO_SMALL}x); {el:.1?}"
        ),
    )
}

struct Recorded {
    cfg: ExperimentConfig,
    run: Run,
    manifest: RunManifest,
}

fn record(cfg: &ExperimentConfig) -> Recorded {
    let (run, manifest) = runner::run_experiment(cfg, THREADS).unwrap();
    Recorded {
        cfg: cfg.clone(),
        run,
        manifest,
    }
}

fn directional(root: &Path) -> (Outcome, Vec<Recorded>) {
    let t = Instant::now();
    let mut runs = vec![];
    let (mut p_sum, mut l_sum, mut wins) = (0.0, 0.0, 0);
    let mut per_seed = vec![];
    for seed in SEEDS {
        let mut p = blobs_config(seed, Method::Pfedpm);
        p.out = root.join(format!("blobs-pfedpm-{seed}"));
        let mut l = blobs_config(seed, Method::Local);
        l.out = root.join(format!("blobs-local-{seed}"));
        let (rp, rl) = (record(&p), record(&l));
        let (pa, la) = (
            rp.run.summary.final_mean_acc_decision,
            rl.run.summary.final_mean_acc_decision,
        );
        p_sum += pa;
        l_sum += la;
        wins += usize::from(pa >= la);
        per_seed.push(format!("{:.1}/{:.1}", 100.0 * pa, 100.0 * la));
        runs.push(rp);
        runs.push(rl);
    }
    let n = SEEDS.len() as f64;
    let (pm, lm) = (p_sum / n, l_sum / n);
    let el = t.elapsed();
    (
        check(
            pm >= lm - DIRECTIONAL_SLACK && wins >= DIRECTIONAL_WINS && within(el, 600),
            format!(
                "mean decision acc pFedPM {:.2}% vs Local {:.2}% (slack {} pp); pFedPM >= Local on {wins}/{} seeds (need {DIRECTIONAL_WINS}); per seed {}; {el:.1?}",
                100.0 * pm,
                100.0 * lm,
                100.0 * DIRECTIONAL_SLACK,
                SEEDS.len(),
                per_seed.join(" ")
            ),
        ),
        runs,
    )
}

fn mnist_sanity(root: &Path) -> (Outcome, Recorded) {
    let t = Instant::now();
    let mut cfg = mnist_config();
    cfg.out = root.join("mnist");
    let rec = record(&cfg);
    let s = &rec.run.summary;
    let el = t.elapsed();
    (
        check(
            s.final_mean_acc_decision >= MNIST_MIN_ACC && within(el, 900),
            format!(
                "{} train samples, {} clients, {} rounds: decision acc {:.2}% ± {:.2} (>= {}%); {el:.1?}",
                s.train_samples,
                s.clients,
                s.rounds,
                100.0 * s.final_mean_acc_decision,
                100.0 * s.final_std_acc_decision,
                100.0 * MNIST_MIN_ACC
            ),
        ),
        rec,
    )
}

fn relation_viability(mnist: &Recorded) -> Outcome {
    let s = &mnist.run.summary;
    let rel = s.final_mean_acc_relation.unwrap_or(f64::NAN);
    let gap = rel - s.final_mean_acc_decision;
    check(
        gap.abs() <= RELATION_GAP,
        format!(
            "relation {:.2}% vs decision {:.2}%: gap {:+.2} pp (limit ±{} pp)",
            100.0 * rel,
            100.0 * s.final_mean_acc_decision,
            100.0 * gap,
            100.0 * RELATION_GAP
        ),
    )
}

fn determinism(runs: &[&Recorded]) -> Outcome {
    let t = Instant::now();
    let bin = env!("CARGO_BIN_EXE_pfedpm");
    let mut identical = 0;
    for r in runs {
        let manifest = r.cfg.out.join(runner::MANIFEST_FILE);
        let replay = r.cfg.out.join("replay");
        let status = Command::new(bin)
            .arg("replay")
            .arg(&manifest)
            .arg("--out")
            .arg(&replay)
            .args(["--threads", "1"])
            .output()
            .unwrap();
        let original = std::fs::read(r.cfg.out.join(METRICS_FILE)).unwrap();
        let replayed = std::fs::read(replay.join(METRICS_FILE)).unwrap_or_default();
        let sums_match = r.manifest.outputs[METRICS_FILE] == io::sha256_hex(&replayed);
        identical += usize::from(status.status.success() && original == replayed && sums_match);
    }
    let el = t.elapsed();
    check(
        identical == runs.len(),
        format!(
            "{identical}/{} manifests replayed at --threads 1 give byte-identical metrics.csv to the --threads {THREADS} originals; {el:.1?}",
            runs.len()
        ),
    )
}

fn loss_decrease(runs: &[Recorded]) -> Outcome {
    let fractions: Vec<f64> = runs
        .iter()
        .filter(|r| r.cfg.method == Method::Pfedpm)
        .map(|r| {
            let losses: Vec<f64> = r.run.history.iter().map(|m| m.mean_train_loss).collect();
            loss_decrease_diagnostic(&losses).unwrap()
        })
        .collect();
    let worst = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = fractions.iter().map(|f| format!("{f:.3}")).collect();
    check(
        worst >= LOSS_DECREASE_MIN,
        format!(
            "strictly decreasing mean-loss rounds per pFedPM run [{}], min {worst:.3} (>= {LOSS_DECREASE_MIN})",
            shown.join(", ")
        ),
    )
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = vec![];
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient correctness", gradients());
    report(2, "aggregation oracle", aggregation());
    report(3, "mixing endpoints", mixing());
    report(4, "degeneracy equivalence", degeneracy());
    report(5, "relation-head freeze", relation_freeze());
    report(6, "communication ratio", communication());
    let (o7, blobs) = directional(root.path());
    report(7, "directional accuracy", o7);
    let (o8, mnist) = mnist_sanity(root.path());
    report(8, "MNIST desk-scale sanity", o8);
    report(9, "relation-head viability", relation_viability(&mnist));
    let mut replayed: Vec<&Recorded> = blobs.iter().collect();
    replayed.push(&mnist);
    report(10, "determinism", determinism(&replayed));
    report(11, "loss-decrease diagnostic", loss_decrease(&blobs));

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, o)| !o.pass)
        .map(|(n, name, _)| format!("{n} ({name})"))
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
