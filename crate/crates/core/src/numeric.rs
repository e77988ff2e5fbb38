//! Dense numeric kernel: row-major matrices, softmax, the loss functions and
//! a central-difference gradient oracle.
//!
//! Everything is 64-bit and runs in a fixed sequential order, so results are
//! reproducible to the bit. Probabilities are floored at [`PROB_FLOOR`]
//! before any logarithm, which keeps losses finite on peaked distributions.

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Errors if the length does not
    /// match `rows * cols` or any entry is non-finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {v} is not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Stacks the given rows into a matrix. All rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::InvalidInput(format!(
                    "row length {} does not match {}",
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    /// Gathers the given rows of `self` into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidInput(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// A probability distribution over classes: entries in [0, 1] summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    /// Validates entries in [0, 1] summing to 1 within 1e-9.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "probability vector must be nonempty".into(),
            ));
        }
        for &v in &values {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "probability entry {v} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { values })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Index of the largest entry, ties broken by the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }
}

/// Lowest-index argmax of a slice.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax with max-subtraction. Output entries are strictly positive and
/// sum to 1.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "softmax needs at least 2 logits, got {}",
            logits.len()
        )));
    }
    if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("logit {v} is not finite")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Clamping away exp underflow keeps every entry strictly positive even
    // for extreme logit gaps; the perturbation is below 1e-300.
    let mut exps: Vec<f64> = logits
        .iter()
        .map(|&v| (v - max).exp().max(f64::MIN_POSITIVE))
        .collect();
    let sum: f64 = exps.iter().sum();
    for v in &mut exps {
        *v /= sum;
    }
    ProbVector::new(exps)
}

/// Categorical cross-entropy `-log pred[label]`, probability floored before
/// the log.
pub fn cce_loss(pred: &ProbVector, hard_label: usize) -> Result<f64> {
    if hard_label >= pred.len() {
        return Err(Error::InvalidInput(format!(
            "class index {hard_label} out of range for {} classes",
            pred.len()
        )));
    }
    Ok(-pred.as_slice()[hard_label].max(PROB_FLOOR).ln())
}

/// KL divergence of the prediction from the soft label,
/// `KL(soft_label || pred) = sum_j s_j (log s_j - log p_j)`, both arguments
/// floored at [`PROB_FLOOR`]. This equals soft-label cross-entropy up to a
/// constant that does not depend on the prediction.
pub fn kl_loss(pred: &ProbVector, soft_label: &ProbVector) -> Result<f64> {
    if pred.len() != soft_label.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: pred has {} classes, soft label has {}",
            pred.len(),
            soft_label.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &s) in pred.as_slice().iter().zip(soft_label.as_slice()) {
        let p = p.max(PROB_FLOOR);
        let s = s.max(PROB_FLOOR);
        total += s * (s.ln() - p.ln());
    }
    Ok(total)
}

/// Mean entropy of a batch of predictions,
/// `-(1/N) sum_i sum_j p_ij log p_ij`, with `0 log 0 = 0` via flooring.
pub fn entropy_loss(preds: &[ProbVector]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for p in preds {
        for &v in p.as_slice() {
            total -= v * v.max(PROB_FLOOR).ln();
        }
    }
    Ok(total / preds.len() as f64)
}

/// Central-difference gradient: `(f(x + eps e_k) - f(x - eps e_k)) / (2 eps)`
/// per coordinate. The oracle behind every gradient test in this crate.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        point[k] = x[k] + eps;
        let plus = f(&point);
        point[k] = x[k] - eps;
        let minus = f(&point);
        point[k] = x[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Evaluation(format!(
                "function returned a non-finite value near coordinate {k}"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}
