//! Forward kernels. The graph records these and supplies the backward rules;
//! they are also usable directly on plain tensors.

use super::kernels::{gemm, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn require_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Shape(format!(
            "{what} expects a rank-2 tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "matmul")?;
    let (k2, n) = require_matrix(b, "matmul")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        View::normal(a.data(), k),
        View::normal(b.data(), n),
        0.0,
        &mut out,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "matmul_nt")?;
    let (n, k2) = require_matrix(b, "matmul_nt")?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul_nt inner dimensions differ: {:?} · {:?}ᵀ",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        View::normal(a.data(), k),
        View::transposed(b.data(), k),
        0.0,
        &mut out,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = require_matrix(a, "transpose")?;
    let src = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Ok(Tensor::from_parts(vec![c, r], out))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax over the last dimension, with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(cols) {
        softmax_in_place(row);
    }
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Numerically stable log-softmax of a single row.
pub fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub(crate) struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_with_cache(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let cols = x.cols();
    if gain.len() != cols || bias.len() != cols {
        return Err(Error::Shape(format!(
            "layer_norm gain {:?} / bias {:?} must match last dim of {:?}",
            gain.shape(),
            bias.shape(),
            x.shape()
        )));
    }
    let rows = x.rows();
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for (r, slot) in inv_std.iter_mut().enumerate() {
        let src = x.row(r);
        let mean = src.iter().sum::<f64>() / cols as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + eps).sqrt();
        *slot = istd;
        let base = r * cols;
        for c in 0..cols {
            let xh = (src[c] - mean) * istd;
            normalized[base + c] = xh;
            out[base + c] = gain.data()[c] * xh + bias.data()[c];
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Row-wise layer normalization followed by `gain ⊙ x̂ + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_with_cache(x, gain, bias, eps).map(|(t, _)| t)
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// GELU, tanh approximation (the GPT-2 form).
pub fn gelu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

/// Sets every entry strictly above the diagonal of a square matrix to −∞.
pub fn causal_mask(x: &Tensor) -> Result<Tensor> {
    let (r, c) = require_matrix(x, "causal_mask")?;
    if r != c {
        return Err(Error::Shape(format!(
            "causal_mask expects a square matrix, got {:?}",
            x.shape()
        )));
    }
    let mut data = x.data().to_vec();
    for i in 0..r {
        for v in &mut data[i * c + i + 1..(i + 1) * c] {
            *v = f64::NEG_INFINITY;
        }
    }
    Ok(Tensor::from_parts(vec![r, c], data))
}

pub(crate) fn check_targets(logits: &Tensor, targets: &[usize]) -> Result<()> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!(
            "cross_entropy has {} logit rows but {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let classes = logits.cols();
    if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::Data(format!(
            "target id {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Mean negative log-probability of `targets` under row-wise softmax of `logits`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    check_targets(logits, targets)?;
    if targets.is_empty() {
        return Err(Error::Data("cross_entropy needs at least one target".into()));
    }
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| -log_softmax_row(logits.row(r))[t])
        .sum();
    Ok(total / targets.len() as f64)
}
