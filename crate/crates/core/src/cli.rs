//! Subcommand implementations behind the `ltlab` binary. Every command
//! validates its inputs before writing anything.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig};
use crate::data::{load_csv_dataset, Manifest, Split};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nc_metrics::{nc_report, FeatureBank};
use crate::par::Execution;
use crate::reweighting::closed_form_weight;
use crate::scheduler::{ml_series, ml_tail, mittag_leffler_branch, MlBranch};
use crate::trainer::{run_experiment, AggregateSummary, EpochRecord, MethodName, RunResult};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Files written by [`cmd_gen`].
#[derive(Clone, Debug, PartialEq)]
pub struct GenOutput {
    pub train_csv: PathBuf,
    pub test_csv: PathBuf,
    pub manifest: PathBuf,
}

/// Generate the synthetic splits and write `train.csv`, `test.csv` and
/// `manifest.json` into `out`.
pub fn cmd_gen(config: &ExperimentConfig, out: &Path) -> Result<GenOutput> {
    config.validate()?;
    if config.dataset.source != DataSource::Synthetic {
        return Err(Error::Config("gen needs dataset.source = \"synthetic\"".into()));
    }
    let (train, test) = config.dataset.load()?;
    create_dir(out)?;
    let files = GenOutput {
        train_csv: out.join("train.csv"),
        test_csv: out.join("test.csv"),
        manifest: out.join("manifest.json"),
    };
    train.write_csv(&files.train_csv)?;
    test.write_csv(&files.test_csv)?;
    let manifest = Manifest::new(&config.dataset.spec(), &train, &test);
    write_file(&files.manifest, &to_json(&manifest))?;
    Ok(files)
}

/// Render epoch records with the fixed `metrics.csv` column order.
pub fn metrics_csv(records: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "epoch", "train_loss", "bal_acc", "acc_head", "acc_med", "acc_tail", "lr", "rho", "nc1", "nc2", "nc3", "nc4",
    ])
    .map_err(|e| Error::Data(e.to_string()))?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.bal_acc.to_string(),
            r.acc_head.to_string(),
            r.acc_med.to_string(),
            r.acc_tail.to_string(),
            r.lr.to_string(),
            r.rho.to_string(),
            r.nc1.to_string(),
            r.nc2.to_string(),
            r.nc3.to_string(),
            r.nc4.to_string(),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub runs: Vec<RunResult>,
    pub aggregate: AggregateSummary,
}

/// Train one run per seed. Each seed writes `seed_{s}/metrics.csv`,
/// `params.json` and `summary.json` under `out`; `out/summary.json` holds
/// the seed means. Seeds run concurrently under `Execution::Parallel`.
pub fn cmd_train(
    config: &ExperimentConfig,
    seeds: &[u64],
    method: Option<MethodName>,
    out: &Path,
    exec: Execution,
) -> Result<TrainOutput> {
    let mut config = config.clone();
    if let Some(m) = method {
        config.method.name = m;
    }
    config.validate()?;
    let seeds = if seeds.is_empty() { vec![config.train.seed] } else { seeds.to_vec() };
    let (train, test) = config.dataset.load()?;

    // Nested parallelism would only add overhead: seeds fan out, each run
    // evaluates sequentially.
    let inner = if seeds.len() > 1 { Execution::Sequential } else { exec };
    let runs = exec
        .map(&seeds, |&s| run_experiment(&config.train_config(s), &train, &test, inner))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    create_dir(out)?;
    for run in &runs {
        let dir = out.join(format!("seed_{}", run.summary.seed));
        create_dir(&dir)?;
        write_file(&dir.join("metrics.csv"), &metrics_csv(&run.records)?)?;
        write_file(&dir.join("params.json"), &to_json(&run.params))?;
        write_file(&dir.join("summary.json"), &to_json(&run.summary))?;
    }
    let summaries: Vec<_> = runs.iter().map(|r| r.summary.clone()).collect();
    let aggregate = AggregateSummary::from_runs(&summaries)?;
    write_file(&out.join("summary.json"), &to_json(&aggregate))?;
    Ok(TrainOutput { runs, aggregate })
}

/// Classifier CSV: header row, one row per class holding the `p` weights,
/// and an optional column named `bias`.
pub fn load_classifier_csv(path: &Path) -> Result<(Matrix, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let bias_col = headers.iter().position(|h| h.trim() == "bias");
    let mut rows = Vec::new();
    let mut bias = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{} row {}: {e}", path.display(), i + 2)))?;
        let mut row = Vec::with_capacity(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!("{} row {}: {cell:?} is not a number", path.display(), i + 2))
            })?;
            if Some(j) == bias_col {
                bias.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no classifier rows", path.display())));
    }
    let w = Matrix::from_rows(&rows).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if bias.is_empty() {
        bias = vec![0.0; w.rows()];
    }
    Ok((w, bias))
}

/// Keys printed by `nc-eval`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NcEvalOutput {
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
    pub nc4: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

/// NC metrics of a feature dump (CSV with a `label` column) against a
/// classifier dump; `class_losses` adds `rho`.
pub fn cmd_nc_eval(
    features_csv: &Path,
    classifier_csv: &Path,
    class_losses: Option<&[f64]>,
    exec: Execution,
) -> Result<NcEvalOutput> {
    let (w, b) = load_classifier_csv(classifier_csv)?;
    let data = load_csv_dataset(features_csv, "label", Split::Train, Some(w.rows()))?;
    if data.input_dim() != w.cols() {
        return Err(Error::dim(format!(
            "features are {}-dimensional but the classifier is {}x{}",
            data.input_dim(),
            w.rows(),
            w.cols()
        )));
    }
    if let Some(l) = class_losses {
        if l.len() != w.rows() {
            return Err(Error::dim(format!("{} class losses for {} classes", l.len(), w.rows())));
        }
    }
    let labels = data.labels();
    let features: Vec<Vec<f64>> = data.samples.into_iter().map(|s| s.x).collect();
    let bank = FeatureBank::from_labeled(features, &labels, w.rows())?;
    let r = nc_report(&w, &b, &bank, class_losses, 0, exec)?;
    Ok(NcEvalOutput {
        nc1: r.nc1,
        nc2: r.nc2,
        nc3: r.nc3,
        nc4: r.nc4_agreement,
        rho: r.rho,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightsOutput {
    pub mean_loss: f64,
    pub alpha: f64,
    pub weights: Vec<f64>,
}

/// Closed-form weights for a list of class losses, with `L̄` their mean.
pub fn cmd_weights(losses: &[f64], alpha: f64, w0: Option<&[f64]>) -> Result<WeightsOutput> {
    if losses.is_empty() {
        return Err(Error::domain("need at least one class loss"));
    }
    if let Some(l) = losses.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::domain(format!("class losses must be finite and >= 0, got {l}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::domain(format!("alpha must be >= 0, got {alpha}")));
    }
    let ones = vec![1.0; losses.len()];
    let w0 = w0.unwrap_or(&ones);
    if w0.len() != losses.len() {
        return Err(Error::dim(format!("{} prior weights for {} losses", w0.len(), losses.len())));
    }
    if let Some(w) = w0.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::domain(format!("prior weights must be positive, got {w}")));
    }
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(WeightsOutput {
        mean_loss,
        alpha,
        weights: losses
            .iter()
            .zip(w0)
            .map(|(&l, &p)| closed_form_weight(l, mean_loss, alpha, p))
            .collect(),
    })
}

/// Branch gap above which `mlf` prints both branch values.
pub const BRANCH_GAP_REPORT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct MlfOutput {
    pub value: f64,
    pub branch: MlBranch,
    /// `(series, tail)` when they differ by more than [`BRANCH_GAP_REPORT`].
    pub both: Option<(f64, f64)>,
}

impl MlfOutput {
    pub fn render(&self) -> String {
        let name = match self.branch {
            MlBranch::Series => "series",
            MlBranch::Tail => "tail",
        };
        let mut s = format!("{} ({name})\n", self.value);
        if let Some((series, tail)) = self.both {
            s.push_str(&format!("series: {series}\ntail: {tail}\n"));
        }
        s
    }
}

/// `E_a(−z)` with its branch; both branch values when they disagree.
pub fn cmd_mlf(a: f64, z: f64) -> Result<MlfOutput> {
    let (value, branch) = mittag_leffler_branch(a, z)?;
    let both = if z > 0.0 {
        let (s, t) = (ml_series(a, z)?, ml_tail(a, z)?);
        ((s - t).abs() > BRANCH_GAP_REPORT).then_some((s, t))
    } else {
        None
    };
    Ok(MlfOutput { value, branch, both })
}
