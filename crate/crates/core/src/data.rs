//! Synthetic long-tailed Gaussian mixtures, CSV ingestion and seeded
//! mini-batch sampling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::ClassCounts;
use crate::error::{Error, Result};
use crate::etf::make_etf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LongTailSpec {
    pub class_count: usize,
    pub n_max: usize,
    pub imbalance_factor: f64,
    pub input_dim: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        LongTailSpec {
            class_count: 10,
            n_max: 500,
            imbalance_factor: 100.0,
            input_dim: 32,
            class_separation: 1.0,
            noise_sigma: 0.3,
            test_per_class: 100,
            seed: 0,
        }
    }
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config("dataset.class_count must be at least 2".into()));
        }
        if self.n_max == 0 {
            return Err(Error::Config("dataset.n_max must be at least 1".into()));
        }
        if !(self.imbalance_factor >= 1.0 && self.imbalance_factor.is_finite()) {
            return Err(Error::Config("dataset.imbalance_factor must be >= 1".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("dataset.input_dim must be at least 1".into()));
        }
        if !(self.class_separation > 0.0) {
            return Err(Error::Config("dataset.class_separation must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("dataset.noise_sigma must be non-negative".into()));
        }
        if self.test_per_class == 0 {
            return Err(Error::Config("dataset.test_per_class must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub counts: ClassCounts,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_count: usize, split: Split) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.x.len());
        let mut counts = vec![0usize; class_count];
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::Data(format!(
                    "sample {i} has {} features, expected {dim}",
                    s.x.len()
                )));
            }
            if s.y >= class_count {
                return Err(Error::Data(format!(
                    "sample {i} has label {} outside [0, {class_count})",
                    s.y
                )));
            }
            counts[s.y] += 1;
        }
        Ok(Dataset {
            samples,
            counts: ClassCounts::new(counts)?,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn class_count(&self) -> usize {
        self.counts.class_count()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// Header `x0,…,x{d−1},label`, one row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header: Vec<String> = (0..self.input_dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for s in &self.samples {
            let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            row.push(s.y.to_string());
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// `n_c = max(1, round(n_max · IF^{−(c−1)/(C−1)}))` for `c = 1..C`.
pub fn exp_profile_counts(class_count: usize, n_max: usize, imbalance_factor: f64) -> Result<ClassCounts> {
    if class_count < 2 {
        return Err(Error::domain("an exponential profile needs at least 2 classes"));
    }
    if !(imbalance_factor >= 1.0) {
        return Err(Error::domain(format!("imbalance factor must be >= 1, got {imbalance_factor}")));
    }
    if n_max == 0 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    let last = (class_count - 1) as f64;
    let counts = (0..class_count)
        .map(|c| {
            let n = n_max as f64 * imbalance_factor.powf(-(c as f64) / last);
            (n.round() as usize).max(1)
        })
        .collect();
    ClassCounts::new(counts)
}

/// Class centers: scaled simplex-ETF directions when `d >= C`, otherwise
/// seeded random unit vectors.
pub fn class_centers(spec: &LongTailSpec) -> Result<Vec<Vec<f64>>> {
    let (c, d) = (spec.class_count, spec.input_dim);
    if d >= c {
        let etf = make_etf(c, d, spec.seed)?;
        Ok((0..c)
            .map(|k| etf.column(k).iter().map(|v| v * spec.class_separation).collect())
            .collect())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok((0..c)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                v.iter().map(|x| x / n * spec.class_separation).collect()
            })
            .collect())
    }
}

fn draw_split(
    centers: &[Vec<f64>],
    counts: &[usize],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Sample> {
    let mut samples = Vec::with_capacity(counts.iter().sum());
    for (y, (&n, center)) in counts.iter().zip(centers).enumerate() {
        for _ in 0..n {
            let x = center
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(rng);
                    m + sigma * e
                })
                .collect();
            samples.push(Sample { x, y });
        }
    }
    samples
}

/// Long-tailed train split and class-balanced test split; independent
/// random streams make the two noise draws disjoint.
pub fn gaussian_mixture(spec: &LongTailSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let counts = exp_profile_counts(spec.class_count, spec.n_max, spec.imbalance_factor)?;
    let centers = class_centers(spec)?;

    let mut train_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    train_rng.set_stream(1);
    let mut test_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    test_rng.set_stream(2);

    let train = draw_split(&centers, counts.counts(), spec.noise_sigma, &mut train_rng);
    let test_counts = vec![spec.test_per_class; spec.class_count];
    let test = draw_split(&centers, &test_counts, spec.noise_sigma, &mut test_rng);
    Ok((
        Dataset::new(train, spec.class_count, Split::Train)?,
        Dataset::new(test, spec.class_count, Split::Test)?,
    ))
}

/// Read a headered CSV; every column other than `label_column` is a numeric
/// feature. Without `class_count` the number of classes is `max label + 1`.
pub fn load_csv_dataset(
    path: &Path,
    label_column: &str,
    split: Split,
    class_count: Option<usize>,
) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| {
            Error::Data(format!(
                "{}: no column named {label_column:?}",
                path.display()
            ))
        })?;

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let record = record.map_err(|e| Error::Data(format!("{} row {line}: {e}", path.display())))?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "{} row {line}: {} fields, header has {}",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        let mut x = Vec::with_capacity(headers.len() - 1);
        let mut y = 0;
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if j == label_idx {
                y = cell.parse::<usize>().map_err(|_| {
                    Error::Data(format!(
                        "{} row {line}: label {cell:?} is not a non-negative integer",
                        path.display()
                    ))
                })?;
            } else {
                let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::Data(format!(
                        "{} row {line}, column {:?}: {cell:?} is not a finite number",
                        path.display(),
                        &headers[j]
                    ))
                })?;
                x.push(v);
            }
        }
        if let Some(c) = class_count {
            if y >= c {
                return Err(Error::Data(format!(
                    "{} row {line}: label {y} outside [0, {c})",
                    path.display()
                )));
            }
        }
        samples.push(Sample { x, y });
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let c = class_count.unwrap_or_else(|| samples.iter().map(|s| s.y).max().unwrap_or(0) + 1);
    Dataset::new(samples, c, split)
}

/// Seeded shuffle of `0..n` cut into consecutive batches; the last batch may
/// be short.
pub fn batch_iter(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    idx.shuffle(&mut rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Manifest written next to generated CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "C")]
    pub class_count: usize,
    pub counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    #[serde(rename = "IF")]
    pub imbalance_factor: f64,
    pub seed: u64,
    pub sigma: f64,
    pub input_dim: usize,
}

impl Manifest {
    pub fn new(spec: &LongTailSpec, train: &Dataset, test: &Dataset) -> Self {
        Manifest {
            class_count: spec.class_count,
            counts: train.counts.counts().to_vec(),
            test_counts: test.counts.counts().to_vec(),
            imbalance_factor: spec.imbalance_factor,
            seed: spec.seed,
            sigma: spec.noise_sigma,
            input_dim: spec.input_dim,
        }
    }
}
