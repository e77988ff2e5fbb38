//! The base classifier: a feed-forward MLP with rectifier hidden layers and
//! a softmax head, plus its exact backpropagation, a forward-mode
//! directional derivative of per-class log-probabilities, and SGD with
//! momentum and weight decay.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{argmax, Matrix, ProbVector, PROB_FLOOR};
use crate::rng::{seeded_rng, stream};

/// Hidden-layer nonlinearity tag. Only the rectifier is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

impl Activation {
    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
        }
    }
}

/// All model parameters flattened in canonical order: for each layer, the
/// weight matrix row-major (output-major) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `self + scale * other`, elementwise.
    pub fn add_scaled(&self, other: &ParamVector, scale: f64) -> Result<ParamVector> {
        if self.len() != other.len() {
            return Err(Error::InvalidInput(format!(
                "parameter length mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(ParamVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        ))
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Feed-forward classifier producing a probability simplex per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    /// weights[l] has shape (layer_dims[l+1], layer_dims[l]).
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Per-sample forward trace: post-activation outputs of every layer plus the
/// final probabilities. `activations[0]` is the input itself.
struct ForwardTrace {
    /// Post-activation values, length = layer count + 1.
    activations: Vec<Vec<f64>>,
    /// Softmax output of the final logits.
    probs: Vec<f64>,
}

impl MlpModel {
    /// Builds a model with seeded uniform init: weights in
    /// `+-sqrt(6 / (fan_in + fan_out))`, biases in `+-1/sqrt(fan_in)`.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidInput(
                "a model needs at least input and output dims".into(),
            ));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidInput("layer dims must be positive".into()));
        }
        if *layer_dims.last().unwrap() < 2 {
            return Err(Error::InvalidInput(
                "output layer needs at least 2 classes".into(),
            ));
        }
        let mut rng = seeded_rng(seed, &[stream::MODEL_INIT]);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(Matrix::new(fan_out, fan_in, data)?);
            // Nonzero bias init keeps pre-activations off the exact relu
            // kink even when a whole previous layer goes dead.
            let b_bound = 1.0 / (fan_in as f64).sqrt();
            biases.push((0..fan_out).map(|_| rng.gen_range(-b_bound..b_bound)).collect());
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation: Activation::Relu,
        })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    #[inline]
    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    #[inline]
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Flattens all parameters in canonical layer order.
    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        ParamVector(out)
    }

    /// Returns a copy of this model with parameters replaced by `params`.
    pub fn with_params(&self, params: &ParamVector) -> Result<MlpModel> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "parameter vector length {} does not match model size {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut model = self.clone();
        let mut offset = 0;
        for l in 0..model.weights.len() {
            let (rows, cols) = (model.layer_dims[l + 1], model.layer_dims[l]);
            let w_len = rows * cols;
            model.weights[l] =
                Matrix::new(rows, cols, params.0[offset..offset + w_len].to_vec())?;
            offset += w_len;
            model.biases[l].copy_from_slice(&params.0[offset..offset + rows]);
            offset += rows;
        }
        Ok(model)
    }

    fn forward_trace(&self, sample: &[f64]) -> ForwardTrace {
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(sample.to_vec());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let prev = activations.last().unwrap();
            let mut z = b.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = w.row(o);
                let mut acc = 0.0;
                for (x, wv) in prev.iter().zip(row) {
                    acc += x * wv;
                }
                *zo += acc;
            }
            if l < last {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(z);
        }
        let logits = activations.last().unwrap();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        ForwardTrace {
            activations,
            probs,
        }
    }

    /// Runs the classifier on a batch, one probability vector per row.
    pub fn forward(&self, batch: &Matrix) -> Result<Vec<ProbVector>> {
        if batch.cols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        (0..batch.rows())
            .map(|i| ProbVector::new(self.forward_trace(batch.row(i)).probs))
            .collect()
    }

    /// Batch-mean loss and its exact parameter gradient.
    pub fn grad_loss(
        &self,
        batch: &Matrix,
        labels: &Labels<'_>,
        kind: LossKind,
    ) -> Result<(f64, ParamVector)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let c = self.class_count();
        match (labels, kind) {
            (Labels::Hard(ids), LossKind::Cce) => {
                if ids.len() != batch.rows() {
                    return Err(Error::InvalidInput(format!(
                        "{} labels for {} samples",
                        ids.len(),
                        batch.rows()
                    )));
                }
                if let Some(&bad) = ids.iter().find(|&&y| y >= c) {
                    return Err(Error::InvalidInput(format!(
                        "class index {bad} out of range for {c} classes"
                    )));
                }
            }
            (Labels::Soft(rows), LossKind::Kl | LossKind::KlEntropy) => {
                if rows.len() != batch.rows() {
                    return Err(Error::InvalidInput(format!(
                        "{} soft labels for {} samples",
                        rows.len(),
                        batch.rows()
                    )));
                }
                if let Some(bad) = rows.iter().find(|r| r.len() != c) {
                    return Err(Error::InvalidInput(format!(
                        "soft label has {} classes, model has {c}",
                        bad.len()
                    )));
                }
            }
            _ => {
                return Err(Error::InvalidInput(
                    "label arity does not match loss kind (hard labels go with cce, \
                     soft labels with kl losses)"
                        .into(),
                ))
            }
        }

        let n = batch.rows() as f64;
        let mut grad = ParamVector::zeros(self.param_count());
        let mut total_loss = 0.0;
        for i in 0..batch.rows() {
            let trace = self.forward_trace(batch.row(i));
            let p = &trace.probs;
            // Loss value and gradient w.r.t. the final-layer logits.
            let mut d_logits = vec![0.0; c];
            match (labels, kind) {
                (Labels::Hard(ids), LossKind::Cce) => {
                    let y = ids[i];
                    total_loss += -p[y].max(PROB_FLOOR).ln();
                    for j in 0..c {
                        d_logits[j] = p[j] - if j == y { 1.0 } else { 0.0 };
                    }
                }
                (Labels::Soft(rows), LossKind::Kl) => {
                    let s = rows[i].as_slice();
                    total_loss += kl_value(p, s);
                    for j in 0..c {
                        d_logits[j] = p[j] - s[j];
                    }
                }
                (Labels::Soft(rows), LossKind::KlEntropy) => {
                    let s = rows[i].as_slice();
                    let h: f64 = p.iter().map(|&v| -v * v.max(PROB_FLOOR).ln()).sum();
                    total_loss += kl_value(p, s) + h;
                    for j in 0..c {
                        let ent = -p[j] * (p[j].max(PROB_FLOOR).ln() + h);
                        d_logits[j] = (p[j] - s[j]) + ent;
                    }
                }
                _ => unreachable!(),
            }
            self.backprop_into(&trace, &d_logits, &mut grad);
        }
        for g in &mut grad.0 {
            *g /= n;
        }
        Ok((total_loss / n, grad))
    }

    /// Accumulates the parameter gradient for one sample given the gradient
    /// w.r.t. the final-layer logits.
    fn backprop_into(&self, trace: &ForwardTrace, d_logits: &[f64], grad: &mut ParamVector) {
        // Per-layer parameter offsets in the canonical flat layout.
        let mut offsets = Vec::with_capacity(self.weights.len());
        let mut off = 0;
        for l in 0..self.weights.len() {
            offsets.push(off);
            off += self.layer_dims[l] * self.layer_dims[l + 1] + self.layer_dims[l + 1];
        }

        let mut delta = d_logits.to_vec();
        for l in (0..self.weights.len()).rev() {
            let input = &trace.activations[l];
            let (rows, cols) = (self.layer_dims[l + 1], self.layer_dims[l]);
            let base = offsets[l];
            for o in 0..rows {
                let d = delta[o];
                let w_row = base + o * cols;
                for (k, &x) in input.iter().enumerate() {
                    grad.0[w_row + k] += d * x;
                }
                grad.0[base + rows * cols + o] += d;
            }
            if l > 0 {
                // delta for the previous layer: W^T delta, masked by the
                // rectifier (its output is positive exactly where it passed).
                let w = &self.weights[l];
                let mut prev = vec![0.0; cols];
                for o in 0..rows {
                    let d = delta[o];
                    for (k, pv) in prev.iter_mut().enumerate() {
                        *pv += w.row(o)[k] * d;
                    }
                }
                for (pv, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *pv = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Directional derivative of the per-class log-probabilities along a
    /// parameter tangent: returns `d/dt log f_j(x; theta + t g)` at `t = 0`
    /// for every class j, computed by exact forward-mode propagation.
    pub fn logprob_jvp(&self, sample: &[f64], tangent: &ParamVector) -> Result<Vec<f64>> {
        if sample.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "sample has {} features, model expects {}",
                sample.len(),
                self.input_dim()
            )));
        }
        if tangent.len() != self.param_count() {
            return Err(Error::InvalidInput(format!(
                "tangent length {} does not match parameter count {}",
                tangent.len(),
                self.param_count()
            )));
        }
        let last = self.weights.len() - 1;
        let mut a = sample.to_vec();
        let mut da = vec![0.0; a.len()];
        let mut offset = 0;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (rows, cols) = (self.layer_dims[l + 1], self.layer_dims[l]);
            let dw = &tangent.0[offset..offset + rows * cols];
            let db = &tangent.0[offset + rows * cols..offset + rows * cols + rows];
            offset += rows * cols + rows;

            let mut z = vec![0.0; rows];
            let mut dz = vec![0.0; rows];
            for o in 0..rows {
                let w_row = w.row(o);
                let dw_row = &dw[o * cols..(o + 1) * cols];
                let mut zv = b[o];
                let mut dzv = db[o];
                for k in 0..cols {
                    zv += w_row[k] * a[k];
                    dzv += dw_row[k] * a[k] + w_row[k] * da[k];
                }
                z[o] = zv;
                dz[o] = dzv;
            }
            if l < last {
                for o in 0..rows {
                    if z[o] <= 0.0 {
                        z[o] = 0.0;
                        dz[o] = 0.0;
                    }
                }
            }
            a = z;
            da = dz;
        }
        // d log softmax_j = dz_j - sum_k p_k dz_k.
        let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = a.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let mean_dz: f64 = exps
            .iter()
            .zip(&da)
            .map(|(&e, &d)| e / sum * d)
            .sum();
        Ok(da.iter().map(|&d| d - mean_dz).collect())
    }

    /// Fraction of samples whose argmax prediction matches the label, ties
    /// broken by the lowest class index.
    pub fn accuracy(&self, batch: &Matrix, hard_labels: &[usize]) -> Result<f64> {
        if batch.rows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if hard_labels.len() != batch.rows() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} samples",
                hard_labels.len(),
                batch.rows()
            )));
        }
        let mut hits = 0usize;
        for i in 0..batch.rows() {
            let trace = self.forward_trace(batch.row(i));
            if argmax(&trace.probs) == hard_labels[i] {
                hits += 1;
            }
        }
        Ok(hits as f64 / batch.rows() as f64)
    }

    /// Writes a versioned textual checkpoint. Parameter values use Rust's
    /// shortest round-trip formatting, so load followed by save is
    /// bit-exact.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("mlp-checkpoint v1\n");
        out.push_str("dims");
        for d in &self.layer_dims {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        out.push_str(&format!("activation {}\n", self.activation.name()));
        let params = self.flatten();
        out.push_str(&format!("params {}\n", params.len()));
        for v in params.as_slice() {
            out.push_str(&format!("{v}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let mut next = || {
            lines
                .next()
                .ok_or_else(|| Error::Parse {
                    line: 0,
                    msg: "unexpected end of checkpoint".into(),
                })
                .map(|(i, l)| (i + 1, l))
        };

        let (line, header) = next()?;
        if header.trim() != "mlp-checkpoint v1" {
            return Err(Error::Parse {
                line,
                msg: format!("unknown checkpoint header {header:?}"),
            });
        }
        let (line, dims_line) = next()?;
        let mut parts = dims_line.split_whitespace();
        if parts.next() != Some("dims") {
            return Err(Error::Parse {
                line,
                msg: "expected dims line".into(),
            });
        }
        let layer_dims: Vec<usize> = parts
            .map(|p| {
                p.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad dimension {p:?}"),
                })
            })
            .collect::<Result<_>>()?;
        let (line, act_line) = next()?;
        let activation = match act_line.trim() {
            "activation relu" => Activation::Relu,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown activation line {other:?}"),
                })
            }
        };
        let (line, count_line) = next()?;
        let count: usize = count_line
            .strip_prefix("params ")
            .and_then(|p| p.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("bad params line {count_line:?}"),
            })?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let (line, v) = next()?;
            values.push(v.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad parameter value {v:?}"),
            })?);
        }
        let template = MlpModel {
            layer_dims: layer_dims.clone(),
            weights: Vec::new(),
            biases: Vec::new(),
            activation,
        };
        if layer_dims.len() < 2 {
            return Err(Error::Parse {
                line: 2,
                msg: "checkpoint needs at least two dims".into(),
            });
        }
        // Rebuild shape buffers, then fill from the flat vector.
        let mut model = template;
        for l in 0..model.layer_dims.len() - 1 {
            let (rows, cols) = (model.layer_dims[l + 1], model.layer_dims[l]);
            model.weights.push(Matrix::zeros(rows, cols));
            model.biases.push(vec![0.0; rows]);
        }
        if values.len() != model.param_count() {
            return Err(Error::Parse {
                line: 4,
                msg: format!(
                    "expected {} parameters, found {}",
                    model.param_count(),
                    values.len()
                ),
            });
        }
        model.with_params(&ParamVector(values))
    }
}

fn kl_value(p: &[f64], s: &[f64]) -> f64 {
    p.iter()
        .zip(s)
        .map(|(&p, &s)| {
            let p = p.max(PROB_FLOOR);
            let s = s.max(PROB_FLOOR);
            s * (s.ln() - p.ln())
        })
        .sum()
}

/// Loss selector for [`MlpModel::grad_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Cce,
    Kl,
    KlEntropy,
}

/// Targets for [`MlpModel::grad_loss`]: class indices for cross-entropy,
/// probability rows for the KL losses.
#[derive(Debug, Clone, Copy)]
pub enum Labels<'a> {
    Hard(&'a [usize]),
    Soft(&'a [ProbVector]),
}

/// State of the SGD-with-momentum optimizer.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub momentum_coeff: f64,
    pub weight_decay: f64,
    pub velocity: ParamVector,
    pub lr_schedule: Vec<(usize, f64)>,
}

impl OptimizerState {
    pub fn new(
        momentum_coeff: f64,
        weight_decay: f64,
        param_count: usize,
        lr_schedule: Vec<(usize, f64)>,
    ) -> Result<Self> {
        validate_schedule(&lr_schedule)?;
        Ok(Self {
            momentum_coeff,
            weight_decay,
            velocity: ParamVector::zeros(param_count),
            lr_schedule,
        })
    }

    /// Learning rate in effect at `epoch`: the last schedule entry whose
    /// epoch does not exceed it.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(&self.lr_schedule, epoch)
    }
}

pub fn validate_schedule(schedule: &[(usize, f64)]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("empty learning-rate schedule".into()));
    }
    if schedule[0].0 != 0 {
        return Err(Error::InvalidInput(
            "learning-rate schedule must start at epoch 0".into(),
        ));
    }
    for w in schedule.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(Error::InvalidInput(
                "learning-rate schedule epochs must be strictly increasing".into(),
            ));
        }
    }
    if schedule.iter().any(|&(_, lr)| lr <= 0.0 || !lr.is_finite()) {
        return Err(Error::InvalidInput(
            "learning rates must be positive".into(),
        ));
    }
    Ok(())
}

pub fn lr_at(schedule: &[(usize, f64)], epoch: usize) -> f64 {
    let mut lr = schedule[0].1;
    for &(e, v) in schedule {
        if e <= epoch {
            lr = v;
        }
    }
    lr
}

/// One optimizer step:
/// `velocity <- momentum * velocity + grad + weight_decay * theta`,
/// `theta <- theta - lr * velocity`.
pub fn sgd_step(
    model: &mut MlpModel,
    grad: &ParamVector,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    let mut params = model.flatten();
    if grad.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {} params, {} grad, {} velocity",
            params.len(),
            grad.len(),
            state.velocity.len()
        )));
    }
    for ((v, g), p) in state
        .velocity
        .0
        .iter_mut()
        .zip(grad.as_slice())
        .zip(params.0.iter_mut())
    {
        *v = state.momentum_coeff * *v + g + state.weight_decay * *p;
        *p -= lr * *v;
    }
    *model = model.with_params(&params)?;
    Ok(())
}
