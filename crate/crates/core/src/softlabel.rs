//! Meta-learned soft labels: a bank of per-sample label logits, the virtual
//! model update they induce, and the gradient of the meta-loss through that
//! update.
//!
//! Labels live in logit space; softmax is applied at every use site, so the
//! label update is unconstrained. The gradient of the batch KL loss with
//! respect to the parameters is `-(1/B) sum_ij s_ij grad_theta log f_j(x_i)`
//! plus terms that do not depend on the parameters, which makes the virtual
//! update linear in the soft labels: the sensitivity of the updated
//! parameters to `s_ij` is `(alpha/B) grad_theta log f_j(x_i)`. Pairing that
//! with the meta-loss gradient at the updated parameters gives the per-class
//! hypergradient as one directional derivative per training sample, which is
//! then chained through the softmax Jacobian back to logit space.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::{Labels, LossKind, MlpModel, ParamVector};
use crate::numeric::{softmax, Matrix, ProbVector};

/// One learnable logit vector per training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelBank {
    logits: Vec<Vec<f64>>,
    class_count: usize,
    k_init: f64,
}

impl SoftLabelBank {
    #[inline]
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    #[inline]
    pub fn k_init(&self) -> f64 {
        self.k_init
    }

    #[inline]
    pub fn logits(&self, slot: usize) -> &[f64] {
        &self.logits[slot]
    }

    #[inline]
    pub fn logit_mut(&mut self, slot: usize, class: usize) -> &mut f64 {
        &mut self.logits[slot][class]
    }

    /// Softmax of one entry's logits.
    pub fn soft_label(&self, slot: usize) -> Result<ProbVector> {
        softmax(&self.logits[slot])
    }

    /// Softmax of the entries at the given slots.
    pub fn soft_labels(&self, slots: &[usize]) -> Result<Vec<ProbVector>> {
        slots
            .iter()
            .map(|&s| {
                if s >= self.logits.len() {
                    return Err(Error::InvalidInput(format!(
                        "bank slot {s} out of range for {} entries",
                        self.logits.len()
                    )));
                }
                self.soft_label(s)
            })
            .collect()
    }
}

/// Initializes one logit vector per sample as `K * onehot(label)`.
pub fn init_soft_labels(
    noisy_hard_labels: &[usize],
    class_count: usize,
    k: f64,
) -> Result<SoftLabelBank> {
    if k <= 0.0 || !k.is_finite() {
        return Err(Error::InvalidInput(format!("K must be positive, got {k}")));
    }
    if class_count < 2 {
        return Err(Error::InvalidInput("need at least 2 classes".into()));
    }
    let mut logits = Vec::with_capacity(noisy_hard_labels.len());
    for (i, &y) in noisy_hard_labels.iter().enumerate() {
        if y >= class_count {
            return Err(Error::InvalidInput(format!(
                "label {y} at sample {i} out of range for {class_count} classes"
            )));
        }
        let mut row = vec![0.0; class_count];
        row[y] = k;
        logits.push(row);
    }
    Ok(SoftLabelBank {
        logits,
        class_count,
        k_init: k,
    })
}

/// One virtual SGD step on the batch KL loss against the bank's soft labels:
/// `theta_hat = theta - alpha * grad_theta L_KL`. Plain SGD, no momentum or
/// weight decay; the real model is not touched.
pub fn virtual_step(
    model: &MlpModel,
    batch_features: &Matrix,
    batch_slots: &[usize],
    bank: &SoftLabelBank,
    alpha: f64,
) -> Result<ParamVector> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    if batch_features.rows() != batch_slots.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows for {} slots",
            batch_features.rows(),
            batch_slots.len()
        )));
    }
    let soft = bank.soft_labels(batch_slots)?;
    let (_, grad) = model.grad_loss(batch_features, &Labels::Soft(&soft), LossKind::Kl)?;
    model.flatten().add_scaled(&grad, -alpha)
}

/// Meta cross-entropy after a fresh virtual step against the bank's
/// current soft labels: the composed map the hypergradient differentiates.
pub fn meta_loss_through_virtual_step(
    model: &MlpModel,
    batch_features: &Matrix,
    batch_slots: &[usize],
    bank: &SoftLabelBank,
    meta_features: &Matrix,
    meta_labels: &[usize],
    alpha: f64,
) -> Result<f64> {
    let theta_hat = virtual_step(model, batch_features, batch_slots, bank, alpha)?;
    let updated = model.with_params(&theta_hat)?;
    let preds = updated.forward(meta_features)?;
    if preds.len() != meta_labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} meta labels for {} predictions",
            meta_labels.len(),
            preds.len()
        )));
    }
    let mut total = 0.0;
    for (p, &y) in preds.iter().zip(meta_labels) {
        total += crate::numeric::cce_loss(p, y)?;
    }
    Ok(total / meta_labels.len().max(1) as f64)
}

/// Per-sample, per-class gradient of the meta-loss with respect to the
/// bank's logits, plus the meta-loss value it was computed from.
#[derive(Debug, Clone)]
pub struct Hypergrad {
    pub slots: Vec<usize>,
    /// One gradient vector per batch slot, in logit space.
    pub d_logits: Vec<Vec<f64>>,
    /// Meta CCE at the virtually updated parameters.
    pub meta_loss: f64,
}

impl Hypergrad {
    pub fn l2_norm(&self) -> f64 {
        self.d_logits
            .iter()
            .flat_map(|r| r.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Gradient of the meta CCE loss (evaluated at the virtually updated
/// parameters on the meta batch) with respect to the batch's soft-label
/// logits.
pub fn label_hypergrad(
    model: &MlpModel,
    batch_features: &Matrix,
    batch_slots: &[usize],
    bank: &SoftLabelBank,
    meta_features: &Matrix,
    meta_labels: &[usize],
    alpha: f64,
) -> Result<Hypergrad> {
    if meta_features.rows() == 0 {
        return Err(Error::InvalidInput("empty meta batch".into()));
    }
    let theta_hat = virtual_step(model, batch_features, batch_slots, bank, alpha)?;
    let updated = model.with_params(&theta_hat)?;
    let (meta_loss, meta_grad) =
        updated.grad_loss(meta_features, &Labels::Hard(meta_labels), LossKind::Cce)?;
    let mut hg = hypergrad_from_meta_grad(
        model,
        batch_features,
        batch_slots,
        bank,
        &meta_grad,
        alpha,
    )?;
    hg.meta_loss = meta_loss;
    Ok(hg)
}

/// The hypergradient given an already-computed meta-loss parameter gradient
/// `g` at the updated parameters. Split out so the linear dependence on `g`
/// can be tested directly.
pub fn hypergrad_from_meta_grad(
    model: &MlpModel,
    batch_features: &Matrix,
    batch_slots: &[usize],
    bank: &SoftLabelBank,
    meta_grad: &ParamVector,
    alpha: f64,
) -> Result<Hypergrad> {
    if batch_features.rows() != batch_slots.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows for {} slots",
            batch_features.rows(),
            batch_slots.len()
        )));
    }
    let b = batch_slots.len() as f64;
    let mut d_logits = Vec::with_capacity(batch_slots.len());
    for (i, &slot) in batch_slots.iter().enumerate() {
        let s = bank.soft_label(slot)?;
        let s = s.as_slice();
        // Directional derivative of each class log-probability along g,
        // taken at the current parameters.
        let jvp = model.logprob_jvp(batch_features.row(i), meta_grad)?;
        // dL/ds_j, then through the softmax Jacobian s_j (delta_jk - s_k).
        let a: Vec<f64> = jvp.iter().map(|&v| alpha / b * v).collect();
        let weighted: f64 = a.iter().zip(s).map(|(&aj, &sj)| aj * sj).sum();
        d_logits.push(
            s.iter()
                .zip(&a)
                .map(|(&sk, &ak)| sk * (ak - weighted))
                .collect(),
        );
    }
    Ok(Hypergrad {
        slots: batch_slots.to_vec(),
        d_logits,
        meta_loss: f64::NAN,
    })
}

/// Outcome of one soft-label update step.
#[derive(Debug, Clone)]
pub struct MetaStepReport {
    /// Meta CCE at the virtual parameters before the label update.
    pub meta_loss_before: f64,
    /// Meta CCE through a fresh virtual step after the update, when the
    /// caller re-evaluated it.
    pub meta_loss_after: Option<f64>,
    pub hypergrad_norm: f64,
    pub batch_slots: Vec<usize>,
}

/// SGD step on the bank: `logits_i <- logits_i - beta * hypergrad_i` for the
/// batch's entries only; every other entry is untouched.
pub fn meta_label_update(
    bank: &mut SoftLabelBank,
    hypergrad: &Hypergrad,
    beta: f64,
) -> Result<MetaStepReport> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    for (&slot, grad) in hypergrad.slots.iter().zip(&hypergrad.d_logits) {
        if slot >= bank.logits.len() {
            return Err(Error::InvalidInput(format!(
                "bank slot {slot} out of range for {} entries",
                bank.logits.len()
            )));
        }
        if grad.len() != bank.class_count {
            return Err(Error::InvalidInput(format!(
                "hypergradient has {} classes, bank has {}",
                grad.len(),
                bank.class_count
            )));
        }
        for (l, g) in bank.logits[slot].iter_mut().zip(grad) {
            *l -= beta * g;
        }
    }
    Ok(MetaStepReport {
        meta_loss_before: hypergrad.meta_loss,
        meta_loss_after: None,
        hypergrad_norm: hypergrad.l2_norm(),
        batch_slots: hypergrad.slots.clone(),
    })
}

/// Fraction of bank entries whose argmax soft label matches the true label.
pub fn label_recovery_accuracy(
    bank: &SoftLabelBank,
    true_labels: Option<&[usize]>,
) -> Result<f64> {
    let true_labels = true_labels.ok_or_else(|| {
        Error::UnsupportedMode("label recovery needs true labels (synthetic-noise mode)".into())
    })?;
    if true_labels.len() != bank.len() {
        return Err(Error::InvalidInput(format!(
            "{} true labels for {} bank entries",
            true_labels.len(),
            bank.len()
        )));
    }
    if bank.is_empty() {
        return Err(Error::InvalidInput("empty bank".into()));
    }
    let mut hits = 0usize;
    for (row, &y) in bank.logits.iter().zip(true_labels) {
        if crate::numeric::argmax(row) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / bank.len() as f64)
}

/// Writes the bank as delimited text: sample id, given label, optional true
/// label, logits, then soft probabilities.
pub fn export_soft_labels(
    path: &Path,
    bank: &SoftLabelBank,
    ids: &[usize],
    given_labels: &[usize],
    true_labels: Option<&[usize]>,
) -> Result<()> {
    if ids.len() != bank.len() || given_labels.len() != bank.len() {
        return Err(Error::InvalidInput(format!(
            "export needs {} ids and given labels, got {} and {}",
            bank.len(),
            ids.len(),
            given_labels.len()
        )));
    }
    if let Some(t) = true_labels {
        if t.len() != bank.len() {
            return Err(Error::InvalidInput(format!(
                "{} true labels for {} bank entries",
                t.len(),
                bank.len()
            )));
        }
    }
    let c = bank.class_count;
    let mut out = String::new();
    out.push_str("sample_id,given_label");
    if true_labels.is_some() {
        out.push_str(",true_label");
    }
    for j in 0..c {
        out.push_str(&format!(",logit_{j}"));
    }
    for j in 0..c {
        out.push_str(&format!(",softprob_{j}"));
    }
    out.push('\n');
    for slot in 0..bank.len() {
        out.push_str(&format!("{},{}", ids[slot], given_labels[slot]));
        if let Some(t) = true_labels {
            out.push_str(&format!(",{}", t[slot]));
        }
        for v in bank.logits(slot) {
            out.push_str(&format!(",{v}"));
        }
        let probs = bank.soft_label(slot)?;
        for v in probs.as_slice() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
