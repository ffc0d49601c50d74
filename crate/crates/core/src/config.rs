//! Experiment configuration: a sectioned TOML document with `[dataset]`,
//! `[train]`, `[lr]`, `[reweight]` and `[method]` tables and an optional
//! top-level `out_dir`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gaussian_mixture, load_csv_dataset, Dataset, LongTailSpec, Split};
use crate::error::{Error, Result};
use crate::reweighting::ReweightConfig;
use crate::scheduler::LrConfig;
use crate::trainer::{MethodConfig, TrainConfig, TrainSettings};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub class_count: usize,
    pub n_max: usize,
    pub imbalance_factor: f64,
    pub input_dim: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub test_per_class: usize,
    pub seed: u64,
    /// CSV inputs, relative to the config file.
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub label_column: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let s = LongTailSpec::default();
        DatasetConfig {
            source: DataSource::Synthetic,
            class_count: s.class_count,
            n_max: s.n_max,
            imbalance_factor: s.imbalance_factor,
            input_dim: s.input_dim,
            class_separation: s.class_separation,
            noise_sigma: s.noise_sigma,
            test_per_class: s.test_per_class,
            seed: s.seed,
            train_csv: None,
            test_csv: None,
            label_column: "label".into(),
        }
    }
}

impl DatasetConfig {
    pub fn spec(&self) -> LongTailSpec {
        LongTailSpec {
            class_count: self.class_count,
            n_max: self.n_max,
            imbalance_factor: self.imbalance_factor,
            input_dim: self.input_dim,
            class_separation: self.class_separation,
            noise_sigma: self.noise_sigma,
            test_per_class: self.test_per_class,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::Synthetic => self.spec().validate(),
            DataSource::Csv => {
                if self.train_csv.is_none() || self.test_csv.is_none() {
                    return Err(Error::Config(
                        "dataset.source = \"csv\" needs dataset.train_csv and dataset.test_csv".into(),
                    ));
                }
                if self.class_count < 2 {
                    return Err(Error::Config("dataset.class_count must be at least 2".into()));
                }
                Ok(())
            }
        }
    }

    /// Generate or read the train and test splits.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        match self.source {
            DataSource::Synthetic => gaussian_mixture(&self.spec()),
            DataSource::Csv => {
                let c = Some(self.class_count);
                let train = load_csv_dataset(self.train_csv.as_ref().expect("validated"), &self.label_column, Split::Train, c)?;
                let test = load_csv_dataset(self.test_csv.as_ref().expect("validated"), &self.label_column, Split::Test, c)?;
                Ok((train, test))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub train: TrainSettings,
    pub lr: LrConfig,
    pub reweight: ReweightConfig,
    pub method: MethodConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse and validate a config file; relative dataset paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset.train_csv, &mut cfg.dataset.test_csv].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let probe = self.train_config(self.train.seed);
        probe.validate()?;
        if let Some(w) = &self.reweight.prior_weights {
            if w.len() != self.dataset.class_count {
                return Err(Error::Config(format!(
                    "reweight.prior_weights has {} entries for {} classes",
                    w.len(),
                    self.dataset.class_count
                )));
            }
        }
        // Resolve the schedule once against a nominal run so that bad
        // schedule settings fail before any data is touched.
        let nominal_counts = vec![1; self.dataset.class_count.max(2)];
        self.lr.resolve(self.train.epochs, 1, &nominal_counts)?;
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            train: TrainSettings { seed, ..self.train.clone() },
            method: self.method.clone(),
            reweight: self.reweight.clone(),
            lr: self.lr.clone(),
        }
    }
}
