//! Finite-difference verification of the soft-label hypergradient.
//!
//! Each trial builds a random small model, batch, soft-label bank and meta
//! batch, computes the analytic hypergradient, and compares every logit
//! coordinate against central differences of the composed map
//! `logits -> meta cross-entropy at the virtually updated parameters`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::numeric::Matrix;
use crate::rng::{seeded_rng, stream};
use crate::softlabel::{
    init_soft_labels, label_hypergrad, meta_loss_through_virtual_step as composed_meta_loss,
    SoftLabelBank,
};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub trials: usize,
    /// Fixed hidden layer sizes; `None` randomizes 1..=3 layers of up to 64
    /// units per trial.
    pub hidden_dims: Option<Vec<usize>>,
    /// Fixed class count; `None` randomizes over 2..=4.
    pub classes: Option<usize>,
    /// Fixed train batch size; `None` randomizes over 1..=8.
    pub batch: Option<usize>,
    pub eps: f64,
    pub alpha: f64,
    /// Guard against accidentally huge models.
    pub max_params: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 20,
            hidden_dims: None,
            classes: None,
            batch: None,
            eps: 1e-4,
            alpha: 0.5,
            max_params: 10_000,
        }
    }
}

/// Worst coordinate seen across all trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCoord {
    pub trial: usize,
    pub sample: usize,
    pub class: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub trials: usize,
    pub coords_checked: usize,
    /// Max relative error among coordinates with magnitude at least 1e-4.
    pub max_rel_err: f64,
    /// Max absolute error among coordinates below that magnitude.
    pub max_abs_err_small: f64,
    pub worst: Option<WorstCoord>,
    pub passed: bool,
}

const REL_TOL: f64 = 1e-4;
const ABS_TOL_SMALL: f64 = 1e-8;
const SMALL_MAGNITUDE: f64 = 1e-4;


/// Runs the hypergradient finite-difference suite.
pub fn run_hypergrad_check(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    if cfg.eps <= 0.0 || !cfg.eps.is_finite() {
        return Err(Error::InvalidInput(format!(
            "eps must be positive, got {}",
            cfg.eps
        )));
    }

    let mut max_rel: f64 = 0.0;
    let mut max_abs_small: f64 = 0.0;
    let mut worst: Option<WorstCoord> = None;
    let mut coords = 0usize;

    for trial in 0..cfg.trials {
        let mut rng = seeded_rng(cfg.seed, &[stream::GRADCHECK, trial as u64]);
        let classes = cfg.classes.unwrap_or_else(|| rng.gen_range(2..=4));
        let batch = cfg.batch.unwrap_or_else(|| rng.gen_range(1..=8));
        let hidden: Vec<usize> = match &cfg.hidden_dims {
            Some(dims) => dims.clone(),
            None => {
                let layers = rng.gen_range(1..=3);
                (0..layers).map(|_| rng.gen_range(4..=64)).collect()
            }
        };
        let input_dim = rng.gen_range(2..=6);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&hidden);
        dims.push(classes);

        let model = MlpModel::new(&dims, rng.gen())?;
        if model.param_count() > cfg.max_params {
            return Err(Error::InvalidInput(format!(
                "model with {} parameters exceeds the {} limit",
                model.param_count(),
                cfg.max_params
            )));
        }

        let features = Matrix::new(
            batch,
            input_dim,
            (0..batch * input_dim)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect(),
        )?;
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        let mut bank = init_soft_labels(&labels, classes, 3.0)?;
        perturb_bank(&mut bank, &mut rng);

        let meta_size = rng.gen_range(1..=8);
        let meta_features = Matrix::new(
            meta_size,
            input_dim,
            (0..meta_size * input_dim)
                .map(|_| rng.gen_range(-2.0..2.0))
                .collect(),
        )?;
        let meta_labels: Vec<usize> =
            (0..meta_size).map(|_| rng.gen_range(0..classes)).collect();

        let slots: Vec<usize> = (0..batch).collect();
        let hg = label_hypergrad(
            &model,
            &features,
            &slots,
            &bank,
            &meta_features,
            &meta_labels,
            cfg.alpha,
        )?;

        for (i, &slot) in slots.iter().enumerate() {
            for k in 0..classes {
                let base = bank.logits(slot)[k];
                *bank.logit_mut(slot, k) = base + cfg.eps;
                let plus = composed_meta_loss(
                    &model,
                    &features,
                    &slots,
                    &bank,
                    &meta_features,
                    &meta_labels,
                    cfg.alpha,
                )?;
                *bank.logit_mut(slot, k) = base - cfg.eps;
                let minus = composed_meta_loss(
                    &model,
                    &features,
                    &slots,
                    &bank,
                    &meta_features,
                    &meta_labels,
                    cfg.alpha,
                )?;
                *bank.logit_mut(slot, k) = base;

                let numeric = (plus - minus) / (2.0 * cfg.eps);
                let analytic = hg.d_logits[i][k];
                coords += 1;

                let denom = analytic.abs().max(numeric.abs());
                if denom < SMALL_MAGNITUDE {
                    let abs = (analytic - numeric).abs();
                    if abs > max_abs_small {
                        max_abs_small = abs;
                    }
                    if abs > ABS_TOL_SMALL {
                        let rel = if denom > 0.0 { abs / denom } else { f64::INFINITY };
                        record_worst(&mut worst, trial, i, k, analytic, numeric, rel);
                    }
                } else {
                    let rel = (analytic - numeric).abs() / denom;
                    if rel > max_rel {
                        max_rel = rel;
                        record_worst(&mut worst, trial, i, k, analytic, numeric, rel);
                    }
                }
            }
        }
    }

    let passed = max_rel <= REL_TOL && max_abs_small <= ABS_TOL_SMALL;
    Ok(GradcheckReport {
        trials: cfg.trials,
        coords_checked: coords,
        max_rel_err: max_rel,
        max_abs_err_small: max_abs_small,
        worst,
        passed,
    })
}

fn record_worst(
    worst: &mut Option<WorstCoord>,
    trial: usize,
    sample: usize,
    class: usize,
    analytic: f64,
    numeric: f64,
    rel_err: f64,
) {
    let better = match worst {
        Some(w) => rel_err > w.rel_err,
        None => true,
    };
    if better {
        *worst = Some(WorstCoord {
            trial,
            sample,
            class,
            analytic,
            numeric,
            rel_err,
        });
    }
}

fn perturb_bank<R: Rng>(bank: &mut SoftLabelBank, rng: &mut R) {
    for slot in 0..bank.len() {
        for k in 0..bank.class_count() {
            *bank.logit_mut(slot, k) += rng.gen_range(-1.0..1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run_hypergrad_check(&GradcheckConfig::default()).unwrap();
        assert!(
            report.passed,
            "max rel err {}, worst {:?}",
            report.max_rel_err, report.worst
        );
        assert!(report.max_rel_err <= REL_TOL);
        assert!(report.coords_checked > 0);
    }

    #[test]
    fn minimal_case_passes() {
        let cfg = GradcheckConfig {
            batch: Some(1),
            classes: Some(2),
            trials: 5,
            ..GradcheckConfig::default()
        };
        let report = run_hypergrad_check(&cfg).unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn coarse_eps_fails() {
        // eps = 0.1 pushes central differences into truncation error.
        let cfg = GradcheckConfig {
            eps: 0.1,
            ..GradcheckConfig::default()
        };
        let report = run_hypergrad_check(&cfg).unwrap();
        assert!(!report.passed, "max rel err {}", report.max_rel_err);
        assert!(report.worst.is_some());
    }

    #[test]
    fn oversized_model_is_rejected() {
        let cfg = GradcheckConfig {
            hidden_dims: Some(vec![200, 200]),
            max_params: 10_000,
            ..GradcheckConfig::default()
        };
        assert!(run_hypergrad_check(&cfg).is_err());
    }
}
