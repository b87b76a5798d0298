//! Dense row-major tensors of f64 plus the handful of pure kernels
//! (softmax, layer norm, matmul) the rest of the crate is built on.
//!
//! Matrices follow the column-as-item convention used throughout the model:
//! a feature matrix with dims `[d, n]` holds `n` items of dimension `d`,
//! one per column.

use crate::error::{Result, SailError};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if dims.iter().any(|&d| d == 0) {
            return Err(SailError::shape("Tensor::new", format!("zero dimension in {dims:?}")));
        }
        if expect != data.len() {
            return Err(SailError::shape(
                "Tensor::new",
                format!("dims {dims:?} expect {expect} entries, got {}", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        Tensor { dims, data: vec![0.0; n] }
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Self {
        let n: usize = dims.iter().product();
        Tensor { dims, data: vec![value; n] }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor { dims: vec![1], data: vec![x] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { dims: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Identity matrix, used by tests and reduction checks.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.dims[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.dims[1]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.dims[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.dims[1];
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.dims[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Column `c` of a rank-2 tensor, copied out.
    pub fn col(&self, c: usize) -> Vec<f64> {
        debug_assert_eq!(self.rank(), 2);
        (0..self.dims[0]).map(|r| self.at(r, c)).collect()
    }

    pub fn same_dims(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        debug_assert_eq!(self.rank(), 2);
        let (r, c) = (self.dims[0], self.dims[1]);
        let mut out = Tensor::zeros(vec![c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// Plain triple-loop matmul, accumulation over k in ascending order.
    /// Every attention path in the crate reuses this accumulation order so
    /// that algebraically equal routes are also bit-equal.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(SailError::shape("matmul", "both operands must be rank-2"));
        }
        let (m, k) = (self.dims[0], self.dims[1]);
        let (k2, n) = (other.dims[0], other.dims[1]);
        if k != k2 {
            return Err(SailError::shape("matmul", format!("inner dims {k} vs {k2}")));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (kk, &a) in arow.iter().enumerate() {
                let brow = &other.data[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if !self.same_dims(other) {
            return Err(SailError::shape("add", format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { dims: self.dims.clone(), data })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if !self.same_dims(other) {
            return Err(SailError::shape("sub", format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Tensor { dims: self.dims.clone(), data })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|x| x * c).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if !self.same_dims(other) {
            return Err(SailError::shape("dot", format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert!(self.same_dims(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Row-wise softmax with max subtraction. Rejects empty tensors and
/// non-finite input.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(SailError::shape("softmax_rows", "input must be rank-2"));
    }
    if x.cols() == 0 {
        return Err(SailError::invalid("softmax_rows", "empty row"));
    }
    if !x.is_finite() {
        return Err(SailError::non_finite("softmax_rows input"));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        let cols = out.cols();
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        softmax_in_place(row);
    }
    Ok(out)
}

/// Shared softmax kernel: max-subtraction, exp, divide by the sum taken in
/// index order. Both the global and the windowed attention paths call this
/// so equal inputs give bit-equal outputs.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Layer normalization of a vector with population variance:
/// `gain ⊙ (x − mean)/sqrt(var + eps) + bias`.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(SailError::shape(
            "layer_norm",
            format!("x len {}, gain len {}, bias len {}", x.len(), gain.len(), bias.len()),
        ));
    }
    if !(eps > 0.0) {
        return Err(SailError::invalid("layer_norm", "eps must be positive"));
    }
    if x.is_empty() {
        return Err(SailError::invalid("layer_norm", "empty input"));
    }
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    Ok(x.iter()
        .zip(gain.iter().zip(bias.iter()))
        .map(|(&v, (&g, &b))| g * (v - mean) * inv + b)
        .collect())
}

/// Default layer-norm epsilon used across the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Sum of terms in an order that depends only on the multiset of values,
/// not their arrangement: terms are sorted by IEEE total order first.
/// Used where a reduction must be invariant under input permutation.
pub fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(|a, b| a.total_cmp(b));
    terms.iter().sum()
}
