//! Line-oriented `key = value` configuration files.
//!
//! Every key is optional and falls back to the reference defaults; unknown
//! keys are rejected. `parse(serialize(cfg))` reproduces `cfg` exactly.
//! `#` starts a comment, blank lines are ignored.

use metalabel_core::data::{NoiseKind, NoiseSpec};
use metalabel_core::train::{ExperimentConfig, TrainConfig, TrainMode};

/// A parsed config plus the keys that were filled from defaults.
#[derive(Debug)]
pub struct LoadedConfig {
    pub experiment: ExperimentConfig,
    pub defaulted_keys: Vec<String>,
}

const KEYS: &[&str] = &[
    "alpha",
    "beta",
    "k_init",
    "lr_schedule",
    "epochs",
    "warmup_epochs",
    "batch_size",
    "meta_batch_size",
    "momentum",
    "weight_decay",
    "seed",
    "mode",
    "hidden_dims",
    "meta_count",
    "test_count",
    "noise_kind",
    "noise_ratio",
    "noise_seed",
];

pub fn parse(text: &str) -> Result<LoadedConfig, String> {
    let mut seen: Vec<(String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {line_no}: expected 'key = value', got {raw:?}"))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("line {line_no}: unknown key {key:?}"));
        }
        if seen.iter().any(|(k, _)| *k == key) {
            return Err(format!("line {line_no}: duplicate key {key:?}"));
        }
        seen.push((key, value));
    }

    let get = |key: &str| seen.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let mut defaulted: Vec<String> = Vec::new();
    let mut note_default = |key: &str| defaulted.push(key.to_string());

    macro_rules! parse_or_default {
        ($key:expr, $default:expr, $parse:expr) => {
            match get($key) {
                Some(v) => $parse(v).map_err(|e: String| format!("key {}: {e}", $key))?,
                None => {
                    note_default($key);
                    $default
                }
            }
        };
    }

    let parse_f64 = |v: &str| -> Result<f64, String> {
        v.parse::<f64>().map_err(|_| format!("bad number {v:?}"))
    };
    let parse_usize = |v: &str| -> Result<usize, String> {
        v.parse::<usize>().map_err(|_| format!("bad count {v:?}"))
    };
    let parse_u64 =
        |v: &str| -> Result<u64, String> { v.parse::<u64>().map_err(|_| format!("bad seed {v:?}")) };

    let d = TrainConfig::default();
    let de = ExperimentConfig::default();

    let alpha = parse_or_default!("alpha", d.alpha, parse_f64);
    let beta = parse_or_default!("beta", d.beta, parse_f64);
    let k_init = parse_or_default!("k_init", d.k_init, parse_f64);
    let lr_schedule = parse_or_default!("lr_schedule", d.lr_schedule.clone(), parse_schedule);
    let epochs = parse_or_default!("epochs", d.epochs, parse_usize);
    let warmup_epochs = parse_or_default!("warmup_epochs", d.warmup_epochs, parse_usize);
    let batch_size = parse_or_default!("batch_size", d.batch_size, parse_usize);
    let meta_batch_size = parse_or_default!("meta_batch_size", d.meta_batch_size, parse_usize);
    let momentum = parse_or_default!("momentum", d.momentum, parse_f64);
    let weight_decay = parse_or_default!("weight_decay", d.weight_decay, parse_f64);
    let seed = parse_or_default!("seed", d.seed, parse_u64);
    let mode = parse_or_default!("mode", d.mode, parse_mode);
    let hidden_dims = parse_or_default!("hidden_dims", d.hidden_dims.clone(), parse_dims);
    let meta_count = parse_or_default!("meta_count", de.meta_count, parse_usize);
    let test_count = parse_or_default!("test_count", de.test_count, parse_usize);
    let noise_kind = parse_or_default!("noise_kind", None, parse_noise_kind);
    let noise_ratio = parse_or_default!("noise_ratio", 0.0, parse_f64);
    // The noise stream defaults to the experiment seed.
    let noise_seed = match get("noise_seed") {
        Some(v) => parse_u64(v).map_err(|e| format!("key noise_seed: {e}"))?,
        None => {
            note_default("noise_seed");
            seed
        }
    };

    let noise = match (noise_kind, noise_ratio > 0.0) {
        (Some(kind), true) => Some(NoiseSpec {
            kind,
            ratio: noise_ratio,
            seed: noise_seed,
        }),
        (None, true) => {
            return Err("noise_ratio is set but noise_kind is none".to_string());
        }
        _ => None,
    };

    Ok(LoadedConfig {
        experiment: ExperimentConfig {
            train: TrainConfig {
                alpha,
                beta,
                k_init,
                lr_schedule,
                epochs,
                warmup_epochs,
                batch_size,
                meta_batch_size,
                momentum,
                weight_decay,
                seed,
                mode,
                hidden_dims,
            },
            meta_count,
            test_count,
            noise,
        },
        defaulted_keys: defaulted,
    })
}

/// Canonical text form: every key, fixed order.
pub fn serialize(cfg: &ExperimentConfig) -> String {
    let t = &cfg.train;
    let schedule = t
        .lr_schedule
        .iter()
        .map(|(e, lr)| format!("{e}:{lr}"))
        .collect::<Vec<_>>()
        .join(",");
    let dims = t
        .hidden_dims
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let (noise_kind, noise_ratio, noise_seed) = match &cfg.noise {
        Some(spec) => (spec.kind.name().to_string(), spec.ratio, spec.seed),
        None => ("none".to_string(), 0.0, t.seed),
    };
    format!(
        "alpha = {}\nbeta = {}\nk_init = {}\nlr_schedule = {}\nepochs = {}\n\
         warmup_epochs = {}\nbatch_size = {}\nmeta_batch_size = {}\nmomentum = {}\n\
         weight_decay = {}\nseed = {}\nmode = {}\nhidden_dims = {}\nmeta_count = {}\n\
         test_count = {}\nnoise_kind = {}\nnoise_ratio = {}\nnoise_seed = {}\n",
        t.alpha,
        t.beta,
        t.k_init,
        schedule,
        t.epochs,
        t.warmup_epochs,
        t.batch_size,
        t.meta_batch_size,
        t.momentum,
        t.weight_decay,
        t.seed,
        t.mode.name(),
        dims,
        cfg.meta_count,
        cfg.test_count,
        noise_kind,
        noise_ratio,
        noise_seed,
    )
}

fn parse_schedule(v: &str) -> Result<Vec<(usize, f64)>, String> {
    let mut out = Vec::new();
    for part in v.split(',') {
        let (epoch, lr) = part
            .trim()
            .split_once(':')
            .ok_or_else(|| format!("bad schedule entry {part:?}, expected epoch:lr"))?;
        let epoch: usize = epoch
            .trim()
            .parse()
            .map_err(|_| format!("bad schedule epoch {epoch:?}"))?;
        let lr: f64 = lr
            .trim()
            .parse()
            .map_err(|_| format!("bad learning rate {lr:?}"))?;
        out.push((epoch, lr));
    }
    Ok(out)
}

fn parse_dims(v: &str) -> Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad hidden dim {p:?}"))
        })
        .collect()
}

fn parse_mode(v: &str) -> Result<TrainMode, String> {
    match v {
        "proposed" => Ok(TrainMode::Proposed),
        "ce_baseline" => Ok(TrainMode::CeBaseline),
        other => Err(format!("unknown mode {other:?}, expected proposed or ce_baseline")),
    }
}

fn parse_noise_kind(v: &str) -> Result<Option<NoiseKind>, String> {
    match v {
        "none" => Ok(None),
        "symmetric" => Ok(Some(NoiseKind::Symmetric)),
        "pairflip" => Ok(Some(NoiseKind::PairFlip)),
        other => Err(format!(
            "unknown noise kind {other:?}, expected none, symmetric or pairflip"
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let loaded = parse("").unwrap();
        assert_eq!(loaded.experiment.train, TrainConfig::default());
        assert_eq!(loaded.experiment.meta_count, 200);
        assert_eq!(loaded.experiment.test_count, 300);
        assert!(loaded.experiment.noise.is_none());
        assert!(loaded.defaulted_keys.contains(&"alpha".to_string()));
    }

    #[test]
    fn missing_alpha_defaults_and_is_reported() {
        let loaded = parse("beta = 100\n").unwrap();
        assert_eq!(loaded.experiment.train.alpha, 0.5);
        assert_eq!(loaded.experiment.train.beta, 100.0);
        assert!(loaded.defaulted_keys.contains(&"alpha".to_string()));
        assert!(!loaded.defaulted_keys.contains(&"beta".to_string()));
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(parse("gamma = 1\n").unwrap_err().contains("unknown key"));
        assert!(parse("alpha = 1\nalpha = 2\n")
            .unwrap_err()
            .contains("duplicate"));
    }

    #[test]
    fn parse_serialize_parse_is_a_fixed_point() {
        let text = "alpha = 0.25\nmode = ce_baseline\nhidden_dims = 8,4\n\
                    lr_schedule = 0:0.01,5:0.001\nnoise_kind = symmetric\nnoise_ratio = 0.4\n";
        let first = parse(text).unwrap().experiment;
        let canonical = serialize(&first);
        let second = parse(&canonical).unwrap().experiment;
        assert_eq!(first, second);
        assert_eq!(canonical, serialize(&second));
    }

    #[test]
    fn noise_spec_round_trip() {
        let loaded =
            parse("noise_kind = pairflip\nnoise_ratio = 0.3\nnoise_seed = 9\n").unwrap();
        let spec = loaded.experiment.noise.unwrap();
        assert_eq!(spec.kind, NoiseKind::PairFlip);
        assert_eq!(spec.ratio, 0.3);
        assert_eq!(spec.seed, 9);

        assert!(parse("noise_ratio = 0.3\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let loaded = parse("# a comment\n\nalpha = 1.5 # trailing\n").unwrap();
        assert_eq!(loaded.experiment.train.alpha, 1.5);
    }
}
