//! Dataset ingestion, synthetic blob generation, deterministic label-noise
//! injection, train/meta/test splitting, and seeded batch iteration.
//!
//! CSV format: header `id,f0,...,f{d-1},label[,true_label]`, UTF-8, `.`
//! decimal, LF newlines. Floats are written with Rust's shortest
//! round-trip formatting, so save/load/save is byte-identical.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::rng::{seeded_rng, stream};

/// Split membership tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Meta,
    Test,
}

/// A labeled dataset with optional hidden true labels and split tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub given_labels: Vec<usize>,
    pub true_labels: Option<Vec<usize>>,
    pub split: Vec<Split>,
    pub class_count: usize,
    /// Row identifiers as read from or written to CSV.
    pub ids: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Positions of all samples carrying the given tag, ascending.
    pub fn positions_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Checks structural invariants: label ranges, tag/feature/label
    /// alignment, unique ids, and clean meta/test labels when true labels
    /// exist.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.given_labels.len() != n || self.split.len() != n || self.ids.len() != n {
            return Err(Error::InvalidInput(format!(
                "misaligned dataset: {} rows, {} labels, {} tags, {} ids",
                n,
                self.given_labels.len(),
                self.split.len(),
                self.ids.len()
            )));
        }
        if self.class_count < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {}",
                self.class_count
            )));
        }
        if let Some(t) = &self.true_labels {
            if t.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{} true labels for {n} rows",
                    t.len()
                )));
            }
        }
        for (i, &y) in self.given_labels.iter().enumerate() {
            if y >= self.class_count {
                return Err(Error::InvalidInput(format!(
                    "sample {i}: label {y} out of range for {} classes",
                    self.class_count
                )));
            }
        }
        if let Some(t) = &self.true_labels {
            for (i, &y) in t.iter().enumerate() {
                if y >= self.class_count {
                    return Err(Error::InvalidInput(format!(
                        "sample {i}: true label {y} out of range for {} classes",
                        self.class_count
                    )));
                }
            }
            for i in 0..n {
                if self.split[i] != Split::Train && self.given_labels[i] != t[i] {
                    return Err(Error::InvalidInput(format!(
                        "sample {i} is in the {:?} split but its given label {} differs \
                         from the true label {}; split clean data before injecting noise",
                        self.split[i], self.given_labels[i], t[i]
                    )));
                }
            }
        }
        // Ids are not required to be 0..n-1, but duplicates are always a
        // mistake.
        let mut sorted = self.ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n {
            return Err(Error::InvalidInput("duplicate sample ids".into()));
        }
        Ok(())
    }
}

/// Noise model applied to the train split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Flip to a uniformly chosen different class.
    Symmetric,
    /// Flip to `(label + 1) mod C`.
    PairFlip,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::PairFlip => "pairflip",
        }
    }
}

/// What a noise injection actually did.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseManifest {
    pub kind: NoiseKind,
    pub ratio: f64,
    pub seed: u64,
    pub train_count: usize,
    /// Ids of flipped samples, ascending by dataset position.
    pub flipped_ids: Vec<usize>,
}

impl NoiseManifest {
    pub fn flip_count(&self) -> usize {
        self.flipped_ids.len()
    }

    pub fn flip_fraction(&self) -> f64 {
        if self.train_count == 0 {
            0.0
        } else {
            self.flip_count() as f64 / self.train_count as f64
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("kind = {}\n", self.kind.name()));
        out.push_str(&format!("ratio = {}\n", self.ratio));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("train_count = {}\n", self.train_count));
        out.push_str(&format!("flip_count = {}\n", self.flip_count()));
        out.push_str(&format!("flip_fraction = {}\n", self.flip_fraction()));
        out.push_str("flipped_ids =");
        for id in &self.flipped_ids {
            out.push_str(&format!(" {id}"));
        }
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Parses the CSV format. All rows are tagged as train; `classes` validates
/// labels against a known class count, otherwise the count is inferred as
/// max label + 1.
pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"id") {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header must start with 'id', got {header:?}"),
        });
    }
    let has_true = cols.last() == Some(&"true_label");
    let label_idx = if has_true { cols.len() - 2 } else { cols.len() - 1 };
    if cols.get(label_idx) != Some(&"label") {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected a 'label' column, got header {header:?}"),
        });
    }
    let dim = label_idx - 1;
    for (j, col) in cols[1..label_idx].iter().enumerate() {
        if *col != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected feature column f{j}, got {col:?}"),
            });
        }
    }

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut given = Vec::new();
    let mut true_labels = if has_true { Some(Vec::new()) } else { None };
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let id: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad id {:?}", fields[0]),
        })?;
        let mut row = Vec::with_capacity(dim);
        for f in &fields[1..label_idx] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature value {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("non-finite feature value {f:?}"),
                });
            }
            row.push(v);
        }
        let parse_label = |s: &str| -> Result<usize> {
            let y: usize = s.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad label {s:?}"),
            })?;
            if let Some(c) = classes {
                if y >= c {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("label {y} out of range for {c} classes"),
                    });
                }
            }
            Ok(y)
        };
        given.push(parse_label(fields[label_idx])?);
        if let Some(t) = &mut true_labels {
            t.push(parse_label(fields[label_idx + 1])?);
        }
        ids.push(id);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    }
    let class_count = classes.unwrap_or_else(|| {
        let max_given = given.iter().copied().max().unwrap_or(0);
        let max_true = true_labels
            .as_ref()
            .and_then(|t| t.iter().copied().max())
            .unwrap_or(0);
        (max_given.max(max_true) + 1).max(2)
    });
    let n = rows.len();
    let ds = Dataset {
        features: Matrix::from_rows(&rows)?,
        given_labels: given,
        true_labels,
        split: vec![Split::Train; n],
        class_count,
        ids,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the dataset in the CSV format. The split tags are not persisted.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("id");
    for j in 0..ds.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push_str(",label");
    if ds.true_labels.is_some() {
        out.push_str(",true_label");
    }
    out.push('\n');
    for i in 0..ds.len() {
        out.push_str(&format!("{}", ds.ids[i]));
        for v in ds.features.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{}", ds.given_labels[i]));
        if let Some(t) = &ds.true_labels {
            out.push_str(&format!(",{}", t[i]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Generates `n` points in `c` Gaussian clusters with balanced classes.
/// Centers are drawn uniformly in [-30, 30]^d and the whole set is
/// resampled (up to 1000 tries, then the last draw is kept) until the
/// minimum pairwise distance reaches 24.0. True labels equal given labels;
/// all rows are tagged as train.
pub fn make_blobs(n: usize, c: usize, d: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if c < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 classes, got {c}")));
    }
    if n < c {
        return Err(Error::InvalidInput(format!(
            "need at least one sample per class: n={n}, classes={c}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidInput("need at least 1 feature".into()));
    }
    if spread < 0.0 || !spread.is_finite() {
        return Err(Error::InvalidInput(format!(
            "spread must be nonnegative, got {spread}"
        )));
    }
    let mut rng = seeded_rng(seed, &[stream::BLOBS]);
    let mut centers: Vec<Vec<f64>> = Vec::new();
    for _attempt in 0..1000 {
        centers = (0..c)
            .map(|_| (0..d).map(|_| rng.gen_range(-30.0..30.0)).collect())
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..c {
            for j in i + 1..c {
                let dist: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(dist);
            }
        }
        if min_dist >= 24.0 {
            break;
        }
    }

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c; // round-robin keeps counts within 1
        let row: Vec<f64> = centers[class]
            .iter()
            .map(|&m| m + spread * standard_normal(&mut rng))
            .collect();
        rows.push(row);
        labels.push(class);
    }
    let ds = Dataset {
        features: Matrix::from_rows(&rows)?,
        given_labels: labels.clone(),
        true_labels: Some(labels),
        split: vec![Split::Train; n],
        class_count: c,
        ids: (0..n).collect(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Box-Muller standard normal draw. Two uniforms per value keeps the stream
/// layout simple and portable.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Corrupts the given labels of train-split samples. Each train sample
/// flips independently with probability `ratio`; symmetric noise picks a
/// uniformly random different class, pairflip moves to the next class.
/// True labels and every non-train sample are untouched. Each sample draws
/// from its own seeded stream, so the outcome is independent of iteration
/// order.
pub fn inject_noise(ds: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, NoiseManifest)> {
    let true_labels = ds.true_labels.as_ref().ok_or_else(|| {
        Error::UnsupportedMode("noise injection needs true labels".into())
    })?;
    if !(0.0..1.0).contains(&spec.ratio) {
        return Err(Error::InvalidInput(format!(
            "noise ratio must be in [0, 1), got {}",
            spec.ratio
        )));
    }
    let train = ds.positions_in(Split::Train);
    for &i in &train {
        if ds.given_labels[i] != true_labels[i] {
            return Err(Error::InvalidInput(format!(
                "sample {i} already carries label noise; inject into a clean dataset"
            )));
        }
    }
    let c = ds.class_count;
    let mut out = ds.clone();
    let mut flipped = Vec::new();
    for &i in &train {
        let mut rng = seeded_rng(spec.seed, &[stream::NOISE, ds.ids[i] as u64]);
        let u: f64 = rng.gen_range(0.0..1.0);
        if u < spec.ratio {
            let old = out.given_labels[i];
            let new = match spec.kind {
                NoiseKind::Symmetric => {
                    let k = rng.gen_range(0..c - 1);
                    if k >= old {
                        k + 1
                    } else {
                        k
                    }
                }
                NoiseKind::PairFlip => (old + 1) % c,
            };
            out.given_labels[i] = new;
            flipped.push(ds.ids[i]);
        }
    }
    out.validate()?;
    let manifest = NoiseManifest {
        kind: spec.kind,
        ratio: spec.ratio,
        seed: spec.seed,
        train_count: train.len(),
        flipped_ids: flipped,
    };
    Ok((out, manifest))
}

/// Assigns split tags by seeded uniform sampling without replacement:
/// `meta_count` samples become meta, `test_count` test, the rest train.
pub fn split(ds: &Dataset, meta_count: usize, test_count: usize, seed: u64) -> Result<Dataset> {
    let n = ds.len();
    if meta_count + test_count >= n {
        return Err(Error::InvalidInput(format!(
            "meta ({meta_count}) + test ({test_count}) must leave at least one \
             of {n} samples for training"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed, &[stream::SPLIT]);
    order.shuffle(&mut rng);
    let mut out = ds.clone();
    out.split = vec![Split::Train; n];
    for &i in &order[..meta_count] {
        out.split[i] = Split::Meta;
    }
    for &i in &order[meta_count..meta_count + test_count] {
        out.split[i] = Split::Test;
    }
    out.validate()?;
    Ok(out)
}

/// Seeded per-epoch batch order over one split: shuffled positions chunked
/// by `batch_size`, final partial batch kept.
pub fn batches(
    ds: &Dataset,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    let mut positions = ds.positions_in(split);
    let mut rng = seeded_rng(seed, &[stream::TRAIN_BATCHES, epoch as u64]);
    positions.shuffle(&mut rng);
    Ok(positions.chunks(batch_size).map(|c| c.to_vec()).collect())
}
