//! Command-line front end: dataset generation, label-noise injection,
//! training runs, hypergradient verification, and metrics aggregation.
//!
//! Exit codes: 0 success, 1 I/O or data errors, 2 usage errors,
//! 3 divergence abort, 4 gradient-check failure.

mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metalabel_core::data::{
    inject_noise, load_csv, make_blobs, save_csv, NoiseKind, NoiseSpec,
};
use metalabel_core::gradcheck::{run_hypergrad_check, GradcheckConfig};
use metalabel_core::train::{prepare_dataset, run_experiment, TrainMode};
use metalabel_core::Error;

#[derive(Parser)]
#[command(
    name = "metalabel",
    about = "Label-noise-robust training with meta-learned soft labels",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blob dataset CSV
    MakeData(MakeDataArgs),
    /// Corrupt the labels of a dataset CSV and write a noise manifest
    InjectNoise(InjectNoiseArgs),
    /// Train a classifier and write metrics, checkpoints and soft labels
    Train(TrainArgs),
    /// Verify the soft-label hypergradient against finite differences
    Gradcheck(GradcheckArgs),
    /// Aggregate per-seed metrics CSVs into mean/min/max learning curves
    Report(ReportArgs),
}

#[derive(Args)]
struct MakeDataArgs {
    /// Number of samples
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Number of classes (at least 2)
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 8)]
    dims: usize,
    /// Standard deviation of each cluster
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InjectNoiseArgs {
    /// Input dataset CSV (needs a true_label column)
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Noise model: symmetric or pairflip
    #[arg(long, default_value = "symmetric")]
    kind: String,
    /// Corruption probability in [0, 1)
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifest path (defaults to the output path + .manifest.txt)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// key = value config file; missing keys use the reference defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config mode: proposed or ce_baseline
    #[arg(long)]
    mode: Option<String>,
    /// Output directory for metrics.csv, checkpoints and soft labels
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of randomized trials
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Fixed hidden layer sizes, e.g. 8,4 (randomized per trial if omitted)
    #[arg(long)]
    layers: Option<String>,
    /// Fixed class count (randomized over 2..=4 if omitted)
    #[arg(long)]
    classes: Option<usize>,
    /// Fixed train batch size (randomized over 1..=8 if omitted)
    #[arg(long)]
    batch: Option<usize>,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV files to aggregate
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::MakeData(args) => cmd_make_data(args),
        Command::InjectNoise(args) => cmd_inject_noise(args),
        Command::Train(args) => cmd_train(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => 3,
        Error::InvalidInput(_) => 2,
        _ => 1,
    }
}

fn usage_error(msg: String) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn cmd_make_data(args: MakeDataArgs) -> Result<ExitCode, Error> {
    if args.classes < 2 {
        return Ok(usage_error(format!(
            "--classes must be at least 2, got {}",
            args.classes
        )));
    }
    let ds = make_blobs(args.n, args.classes, args.dims, args.spread, args.seed)?;
    save_csv(&ds, &args.out)?;
    println!(
        "wrote {} samples ({} classes, {} features) to {}",
        ds.len(),
        ds.class_count,
        ds.dim(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_inject_noise(args: InjectNoiseArgs) -> Result<ExitCode, Error> {
    let kind = match args.kind.as_str() {
        "symmetric" => NoiseKind::Symmetric,
        "pairflip" => NoiseKind::PairFlip,
        other => {
            return Ok(usage_error(format!(
                "unknown noise kind {other:?}, expected symmetric or pairflip"
            )))
        }
    };
    if !(0.0..1.0).contains(&args.ratio) {
        return Ok(usage_error(format!(
            "--ratio must be in [0, 1), got {}",
            args.ratio
        )));
    }
    let ds = load_csv(&args.input, None)?;
    let spec = NoiseSpec {
        kind,
        ratio: args.ratio,
        seed: args.seed,
    };
    let (noisy, manifest) = inject_noise(&ds, &spec)?;
    save_csv(&noisy, &args.out)?;
    let manifest_path = args.manifest.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".manifest.txt");
        PathBuf::from(p)
    });
    manifest.write(&manifest_path)?;
    println!(
        "flipped {} of {} train labels ({:.4}) -> {} (manifest {})",
        manifest.flip_count(),
        manifest.train_count,
        manifest.flip_fraction(),
        args.out.display(),
        manifest_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let config_text = match &args.config {
        Some(path) => {
            std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?
        }
        None => String::new(),
    };
    let loaded = match config::parse(&config_text) {
        Ok(l) => l,
        Err(msg) => return Ok(usage_error(format!("config: {msg}"))),
    };
    let mut experiment = loaded.experiment;
    if !loaded.defaulted_keys.is_empty() {
        eprintln!(
            "note: config keys not set, using defaults: {}",
            loaded.defaulted_keys.join(", ")
        );
    }
    if let Some(mode) = &args.mode {
        experiment.train.mode = match mode.as_str() {
            "proposed" => TrainMode::Proposed,
            "ce_baseline" => TrainMode::CeBaseline,
            other => {
                return Ok(usage_error(format!(
                    "unknown mode {other:?}, expected proposed or ce_baseline"
                )))
            }
        };
    }

    let ds = load_csv(&args.data, None)?;
    let (prepared, manifest) = prepare_dataset(&ds, &experiment)?;
    std::fs::create_dir_all(&args.outdir).map_err(|e| Error::Io {
        path: args.outdir.clone(),
        source: e,
    })?;
    if let Some(manifest) = &manifest {
        manifest.write(&args.outdir.join("noise_manifest.txt"))?;
    }
    std::fs::write(
        args.outdir.join("config.txt"),
        config::serialize(&experiment),
    )
    .map_err(|e| Error::Io {
        path: args.outdir.join("config.txt"),
        source: e,
    })?;

    let result = run_experiment(&experiment.train, &prepared, Some(&args.outdir))?;
    let last = result
        .final_metrics()
        .ok_or_else(|| Error::InvalidInput("run produced no epochs".into()))?;
    println!("Method          Train    Test");
    println!(
        "{:<15} {:>5.1}%  {:>5.1}%",
        experiment.train.mode.name(),
        100.0 * last.train_acc_vs_given,
        100.0 * last.test_acc
    );
    if let Some(recovery) = last.label_recovery {
        println!("label recovery: {:.1}%", 100.0 * recovery);
    }
    if result.beta_used != experiment.train.beta {
        println!(
            "soft-label step scaled: beta {} -> {}",
            experiment.train.beta, result.beta_used
        );
    }
    println!("outputs in {}", args.outdir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let hidden_dims = match &args.layers {
        Some(text) => {
            let dims: Result<Vec<usize>, _> =
                text.split(',').map(|p| p.trim().parse::<usize>()).collect();
            match dims {
                Ok(d) if !d.is_empty() => Some(d),
                _ => return Ok(usage_error(format!("bad --layers value {text:?}"))),
            }
        }
        None => None,
    };
    let cfg = GradcheckConfig {
        seed: args.seed,
        trials: args.trials,
        hidden_dims,
        classes: args.classes,
        batch: args.batch,
        eps: args.eps,
        ..GradcheckConfig::default()
    };
    let report = run_hypergrad_check(&cfg)?;
    println!(
        "checked {} logit coordinates over {} trials",
        report.coords_checked, report.trials
    );
    println!("max relative error: {:.3e}", report.max_rel_err);
    println!(
        "max absolute error (small-magnitude coords): {:.3e}",
        report.max_abs_err_small
    );
    if report.passed {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        if let Some(w) = report.worst {
            eprintln!(
                "worst coordinate: trial {} sample {} class {}: analytic {} vs numeric {} \
                 (rel err {:.3e})",
                w.trial, w.sample, w.class, w.analytic, w.numeric, w.rel_err
            );
        }
        eprintln!("FAIL");
        Ok(ExitCode::from(4))
    }
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode, Error> {
    report::aggregate(&args.metrics, &args.out)
}
