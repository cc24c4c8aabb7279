//! Independent oracles shared by the integration and acceptance suites.

#![allow(dead_code)]

use pfedpm_core::autodiff::{Graph, Var};
use pfedpm_core::protocol::{PrototypeSet, UploadMsg};
use pfedpm_core::rng::{stream, Owner, Purpose, StreamRng};
use pfedpm_core::Tensor;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;

pub fn rng(seed: u64) -> StreamRng {
    stream(seed, Owner::Global, Purpose::Dataset)
}

pub fn random_matrix(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn random_vector(rng: &mut StreamRng, n: usize) -> Tensor {
    Tensor::vector((0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
}

/// Entries in [−2, 2] bounded away from zero so ReLU kinks sit outside the stencil.
fn off_kink_matrix(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

type Build = Box<dyn for<'a> Fn(&mut Graph<'a>, &[Var]) -> pfedpm_core::Result<Var>>;

/// A scalar function of some tensors, recorded on a fresh graph.
pub struct Case {
    pub params: Vec<Tensor>,
    pub build: Build,
}

impl Case {
    fn value(&self, params: &[Tensor]) -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p)).collect();
        let root = (self.build)(&mut g, &vars).unwrap();
        g.value(root).item().unwrap()
    }

    /// Largest `|analytic − central difference| / max(1, |analytic|)`.
    pub fn max_relative_error(&self) -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.params.iter().map(|p| g.param(p)).collect();
        let root = (self.build)(&mut g, &vars).unwrap();
        let grads = g.backward(root).unwrap();
        let mut worst: f64 = 0.0;
        let mut probe = self.params.clone();
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).unwrap().data().to_vec();
            for (e, &a) in analytic.iter().enumerate() {
                let orig = probe[k].data()[e];
                probe[k].data_mut()[e] = orig + FD_STEP;
                let up = self.value(&probe);
                probe[k].data_mut()[e] = orig - FD_STEP;
                let down = self.value(&probe);
                probe[k].data_mut()[e] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            }
        }
        worst
    }
}

fn reduce_mse<'a>(g: &mut Graph<'a>, out: Var, target: Tensor) -> pfedpm_core::Result<Var> {
    let t = g.input(target);
    g.mse(out, t)
}

pub const OPS: [&str; 14] = [
    "matmul",
    "add_bias",
    "relu",
    "sigmoid",
    "concat_rows",
    "mean_rows",
    "select_rows",
    "softmax_cross_entropy",
    "mse",
    "l2_distance",
    "sum",
    "add",
    "scale",
    "two_layer_mlp",
];

/// One random instance of the named op, reduced to a scalar where needed by
/// an MSE against a random target.
pub fn instance(op: &str, rng: &mut StreamRng) -> Case {
    let m = rng.random_range(1..=4);
    let n = rng.random_range(1..=5);
    let k = rng.random_range(1..=4);
    match op {
        "matmul" => {
            let t = random_matrix(rng, m, n);
            Case {
                params: vec![random_matrix(rng, m, k), random_matrix(rng, k, n)],
                build: Box::new(move |g, p| {
                    let y = g.matmul(p[0], p[1])?;
                    reduce_mse(g, y, t.clone())
                }),
            }
        }
        "add_bias" => {
            let t = random_matrix(rng, m, n);
            Case {
                params: vec![random_matrix(rng, m, n), random_vector(rng, n)],
                build: Box::new(move |g, p| {
                    let y = g.add_bias(p[0], p[1])?;
                    reduce_mse(g, y, t.clone())
                }),
            }
        }
        "relu" | "sigmoid" => {
            let t = random_matrix(rng, m, n);
            let relu = op == "relu";
            Case {
                params: vec![off_kink_matrix(rng, m, n)],
                build: Box::new(move |g, p| {
                    let y = if relu { g.relu(p[0])? } else { g.sigmoid(p[0])? };
                    reduce_mse(g, y, t.clone())
                }),
            }
        }
        "concat_rows" => {
            let t = random_matrix(rng, m, n + k);
            Case {
                params: vec![random_matrix(rng, m, n), random_matrix(rng, m, k)],
                build: Box::new(move |g, p| {
                    let y = g.concat_rows(p[0], p[1])?;
                    reduce_mse(g, y, t.clone())
                }),
            }
        }
        "mean_rows" => {
            let t = random_vector(rng, n);
            Case {
                params: vec![random_matrix(rng, m, n)],
                build: Box::new(move |g, p| {
                    let y = g.mean_rows(p[0])?;
                    reduce_mse(g, y, t.clone())
                }),
            }
        }
        "select_rows" => {
            let rows: Vec<usize> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(0..m)).collect();
            let t = random_matrix(rng, rows.len(), n);
            Case {
                params: vec![random_matrix(rng, m, n)],
                build: Box::new(move |g, p| {
                    let y = g.select_rows(p[0], &rows)?;
                    reduce_mse(g, y, t.clone())
                }),
            }
        }
        "softmax_cross_entropy" => {
            let classes = n + 1;
            let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
            let logits = random_matrix(rng, m, classes);
            Case {
                params: vec![logits],
                build: Box::new(move |g, p| g.softmax_cross_entropy(p[0], &labels)),
            }
        }
        "mse" => Case {
            params: vec![random_matrix(rng, m, n), random_matrix(rng, m, n)],
            build: Box::new(|g, p| g.mse(p[0], p[1])),
        },
        "l2_distance" => {
            let d = rng.random_range(2..=8);
            Case {
                params: vec![random_vector(rng, d), random_vector(rng, d)],
                build: Box::new(|g, p| g.l2_distance(p[0], p[1])),
            }
        }
        "sum" => Case {
            params: vec![random_matrix(rng, m, n)],
            build: Box::new(|g, p| g.sum(p[0])),
        },
        "add" => {
            let t = random_matrix(rng, m, n);
            Case {
                params: vec![random_matrix(rng, m, n), random_matrix(rng, m, n)],
                build: Box::new(move |g, p| {
                    let y = g.add(p[0], p[1])?;
                    reduce_mse(g, y, t.clone())
                }),
            }
        }
        "scale" => {
            let t = random_matrix(rng, m, n);
            let factor = rng.random_range(-3.0..3.0);
            Case {
                params: vec![random_matrix(rng, m, n)],
                build: Box::new(move |g, p| {
                    let y = g.scale(p[0], factor)?;
                    reduce_mse(g, y, t.clone())
                }),
            }
        }
        "two_layer_mlp" => {
            // CE + λ·‖mean hidden feature of one class − prototype‖, the shape
            // of the local objective.
            let hidden = rng.random_range(2..=6);
            let classes = n + 1;
            let x = off_kink_matrix(rng, m, k);
            let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
            let rows: Vec<usize> = (0..m).filter(|&r| labels[r] == labels[0]).collect();
            let proto = random_vector(rng, hidden).scale(3.0).unwrap();
            Case {
                params: vec![
                    random_matrix(rng, k, hidden),
                    random_vector(rng, hidden),
                    random_matrix(rng, hidden, classes),
                    random_vector(rng, classes),
                ],
                build: Box::new(move |g, p| {
                    let xv = g.input(x.clone());
                    let z = g.matmul(xv, p[0])?;
                    let z = g.add_bias(z, p[1])?;
                    let h = g.relu(z)?;
                    let logits = g.matmul(h, p[2])?;
                    let logits = g.add_bias(logits, p[3])?;
                    let ce = g.softmax_cross_entropy(logits, &labels)?;
                    let sel = g.select_rows(h, &rows)?;
                    let mean = g.mean_rows(sel)?;
                    let pv = g.input(proto.clone());
                    let dist = g.l2_distance(mean, pv)?;
                    let reg = g.scale(dist, 0.7)?;
                    g.add(ce, reg)
                }),
            }
        }
        other => panic!("unknown op {other}"),
    }
}

/// Worst relative error per op over `instances` random instances each.
pub fn gradient_report(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = rng(seed);
    OPS.iter()
        .map(|&op| {
            let worst = (0..instances)
                .map(|_| instance(op, &mut rng).max_relative_error())
                .fold(0.0, f64::max);
            (op, worst)
        })
        .collect()
}

/// Random uploads: up to `max_clients` clients, each owning a random subset
/// of up to `max_classes` classes with a positive count.
pub fn random_uploads(rng: &mut StreamRng, max_clients: usize, max_classes: usize, dim: usize) -> Vec<UploadMsg> {
    let clients = rng.random_range(1..=max_clients);
    let classes = rng.random_range(1..=max_classes);
    (0..clients)
        .map(|client| {
            let mut set = PrototypeSet::new(dim);
            for c in 0..classes {
                if rng.random_bool(0.6) {
                    let count = rng.random_range(1..=40);
                    set.insert(c, random_vector(rng, dim), count).unwrap();
                }
            }
            UploadMsg {
                client,
                prototypes: set,
            }
        })
        .collect()
}

/// Brute-force oracle: for each class, `Σ count·v / Σ count` accumulated
/// with explicit loops over clients then coordinates.
pub fn aggregate_oracle(uploads: &[UploadMsg]) -> Vec<(usize, Vec<f64>, u64)> {
    let dim = uploads[0].prototypes.dim();
    let max_label = uploads
        .iter()
        .flat_map(|u| u.prototypes.labels())
        .max();
    let Some(max_label) = max_label else {
        return vec![];
    };
    let mut out = vec![];
    for label in 0..=max_label {
        let mut total = 0u64;
        for u in uploads {
            if let Some(p) = u.prototypes.get(label) {
                total += p.count;
            }
        }
        if total == 0 {
            continue;
        }
        let mut acc = vec![0.0; dim];
        for u in uploads {
            if let Some(p) = u.prototypes.get(label) {
                for i in 0..dim {
                    acc[i] += p.count as f64 * p.vector.data()[i];
                }
            }
        }
        for a in &mut acc {
            *a /= total as f64;
        }
        out.push((label, acc, total));
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
