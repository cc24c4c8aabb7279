//! Dense rank-0/1/2 tensors of `f64` and the forward kernels used by the
//! autodiff graph.
//!
//! Reductions always accumulate left to right so results are bitwise
//! reproducible. Every kernel rejects non-finite results.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    rank: u8,
    dims: [usize; 2],
}

impl Shape {
    pub const SCALAR: Shape = Shape {
        rank: 0,
        dims: [1, 1],
    };

    pub fn vector(len: usize) -> Self {
        Shape {
            rank: 1,
            dims: [len, 1],
        }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape {
            rank: 2,
            dims: [rows, cols],
        }
    }

    pub fn rank(&self) -> usize {
        self.rank as usize
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.rank as usize]
    }

    pub fn numel(&self) -> usize {
        self.dims().iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.dims()).finish()
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow(op))
    }
}

impl Tensor {
    pub fn from_shape(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.numel() != data.len() {
            return Err(Error::dimension("tensor", shape, data.len()));
        }
        ensure_finite("tensor", &data)?;
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::SCALAR,
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_shape(Shape::matrix(rows, cols), data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dimension("from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the entries, used by optimizers. Callers must keep
    /// the entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a matrix; a vector counts as one row.
    pub fn rows(&self) -> usize {
        match self.shape.rank {
            2 => self.shape.dims[0],
            _ => 1,
        }
    }

    /// Column count of a matrix; the length of a vector.
    pub fn cols(&self) -> usize {
        match self.shape.rank {
            2 => self.shape.dims[1],
            1 => self.shape.dims[0],
            _ => 1,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.rank == 0
    }

    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::contract(alloc::format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.rank == 2 {
            Ok((self.shape.dims[0], self.shape.dims[1]))
        } else {
            Err(Error::dimension(op, self.shape, "a matrix"))
        }
    }

    fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        ensure_finite(op, &data)?;
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// `self · rhs` for `[m×k]·[k×n]`. Each output entry sums over `k` in
    /// ascending order starting from `0.0`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.expect_matrix("matmul")?;
        let (k2, n) = rhs.expect_matrix("matmul")?;
        if k != k2 {
            return Err(Error::dimension("matmul", self.shape, rhs.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        ensure_finite("matmul", &out)?;
        Ok(Tensor {
            shape: Shape::matrix(m, n),
            data: out,
        })
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Tensor) -> Result<Tensor> {
        let (k, m) = self.expect_matrix("matmul_tn")?;
        let (k2, n) = rhs.expect_matrix("matmul_tn")?;
        if k != k2 {
            return Err(Error::dimension("matmul_tn", self.shape, rhs.shape));
        }
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &rhs.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        ensure_finite("matmul_tn", &out)?;
        Ok(Tensor {
            shape: Shape::matrix(m, n),
            data: out,
        })
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.expect_matrix("matmul_nt")?;
        let (n, k2) = rhs.expect_matrix("matmul_nt")?;
        if k != k2 {
            return Err(Error::dimension("matmul_nt", self.shape, rhs.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &rhs.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out[i * n + j] = acc;
            }
        }
        ensure_finite("matmul_nt", &out)?;
        Ok(Tensor {
            shape: Shape::matrix(m, n),
            data: out,
        })
    }

    /// Adds the vector `bias` to every row.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.expect_matrix("add_bias")?;
        if bias.shape != Shape::vector(n) {
            return Err(Error::dimension("add_bias", self.shape, bias.shape));
        }
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(n.max(1)).take(m) {
            for (v, &b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        ensure_finite("add_bias", &data)?;
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.map("relu", |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map("sigmoid", sigmoid)
    }

    /// Horizontal concatenation `[m×p] ∥ [m×q] → [m×(p+q)]`.
    pub fn concat_rows(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, p) = self.expect_matrix("concat_rows")?;
        let (m2, q) = rhs.expect_matrix("concat_rows")?;
        if m != m2 {
            return Err(Error::dimension("concat_rows", self.shape, rhs.shape));
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(&self.data[i * p..(i + 1) * p]);
            data.extend_from_slice(&rhs.data[i * q..(i + 1) * q]);
        }
        Ok(Tensor {
            shape: Shape::matrix(m, p + q),
            data,
        })
    }

    /// Column sums accumulated top to bottom, as a vector.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (m, n) = self.expect_matrix("sum_rows")?;
        let mut acc = vec![0.0; n];
        for i in 0..m {
            for (a, &v) in acc.iter_mut().zip(&self.data[i * n..(i + 1) * n]) {
                *a += v;
            }
        }
        ensure_finite("sum_rows", &acc)?;
        Ok(Tensor::vector(acc))
    }

    /// Column means, as a vector.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let (m, _) = self.expect_matrix("mean_rows")?;
        if m == 0 {
            return Err(Error::EmptyInput("mean_rows"));
        }
        let mut out = self.sum_rows()?;
        let inv = m as f64;
        for v in &mut out.data {
            *v /= inv;
        }
        Ok(out)
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (m, n) = self.expect_matrix("select_rows")?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::dimension("select_rows", self.shape, r));
            }
            data.extend_from_slice(&self.data[r * n..(r + 1) * n]);
        }
        Ok(Tensor {
            shape: Shape::matrix(rows.len(), n),
            data,
        })
    }

    /// Row-wise softmax of a matrix, max-subtracted.
    pub fn softmax(&self) -> Result<Tensor> {
        let (m, n) = self.expect_matrix("softmax")?;
        let mut data = self.data.clone();
        if n > 0 {
            for row in data.chunks_exact_mut(n).take(m) {
                softmax_in_place(row);
            }
        }
        ensure_finite("softmax", &data)?;
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// Mean over rows of `-log softmax(row)[label]`. Returns the loss and
    /// the row-wise softmax probabilities (reused by the backward pass).
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<(f64, Tensor)> {
        let (m, c) = self.expect_matrix("softmax_cross_entropy")?;
        if labels.len() != m {
            return Err(Error::dimension("softmax_cross_entropy", self.shape, labels.len()));
        }
        if m == 0 {
            return Err(Error::EmptyInput("softmax_cross_entropy"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Label {
                label: bad,
                classes: c,
            });
        }
        let mut probs = self.data.clone();
        let mut total = 0.0;
        for (row, (logits, &y)) in probs
            .chunks_exact_mut(c)
            .zip(self.data.chunks_exact(c).zip(labels))
        {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &v in logits {
                sum += libm::exp(v - max);
            }
            let log_z = max + libm::log(sum);
            total += log_z - logits[y];
            for (p, &v) in row.iter_mut().zip(logits) {
                *p = libm::exp(v - log_z);
            }
        }
        let loss = total / m as f64;
        ensure_finite("softmax_cross_entropy", &[loss])?;
        ensure_finite("softmax_cross_entropy", &probs)?;
        Ok((
            loss,
            Tensor {
                shape: self.shape,
                data: probs,
            },
        ))
    }

    /// Mean of squared differences.
    pub fn mse(&self, target: &Tensor) -> Result<f64> {
        if self.shape != target.shape {
            return Err(Error::dimension("mse", self.shape, target.shape));
        }
        if self.data.is_empty() {
            return Err(Error::EmptyInput("mse"));
        }
        let mut acc = 0.0;
        for (&p, &t) in self.data.iter().zip(&target.data) {
            let d = p - t;
            acc += d * d;
        }
        let out = acc / self.data.len() as f64;
        ensure_finite("mse", &[out])?;
        Ok(out)
    }

    /// Euclidean distance between two vectors of equal shape.
    pub fn l2_distance(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::dimension("l2_distance", self.shape, other.shape));
        }
        let mut acc = 0.0;
        for (&u, &v) in self.data.iter().zip(&other.data) {
            let d = u - v;
            acc += d * d;
        }
        let out = libm::sqrt(acc);
        ensure_finite("l2_distance", &[out])?;
        Ok(out)
    }

    pub fn sum(&self) -> Result<f64> {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        ensure_finite("sum", &[acc])?;
        Ok(acc)
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::dimension("add", self.shape, rhs.shape));
        }
        let data: Vec<f64> = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        ensure_finite("add", &data)?;
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.map("scale", |v| v * factor)
    }

    pub(crate) fn add_assign_unchecked(&mut self, rhs: &Tensor) {
        debug_assert_eq!(self.shape, rhs.shape);
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        ensure_finite(op, &self.data)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
