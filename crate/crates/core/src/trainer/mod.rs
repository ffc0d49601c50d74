//! Desk-scale training loop: mini-batch SGD on a softmax classifier with any
//! baseline loss, batch-wise inverse reweighting after the switch epoch,
//! and per-epoch balanced accuracy, loss imbalance and NC tracking.

pub mod method;
pub mod model;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::baselines::range_loss_grad;
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::nc_metrics::{nc_report, FeatureBank};
use crate::par::Execution;
use crate::reweighting::{InverseReweighter, ReweightConfig};
use crate::scheduler::{LrConfig, Schedule};

pub use method::{MethodConfig, MethodName, Objective};
pub use model::{backward, backward_from, ce_loss, sgd_step, Forward, HiddenLayer, ModelParams};

/// Optimizer and model settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Width of the ReLU hidden layer; 0 trains a linear model on the inputs.
    pub hidden_dim: usize,
    /// Learnable classifier bias; held at zero when false.
    pub bias: bool,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 40,
            batch_size: 256,
            momentum: 0.9,
            weight_decay: 5e-4,
            hidden_dim: 0,
            bias: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub train: TrainSettings,
    pub method: MethodConfig,
    pub reweight: ReweightConfig,
    pub lr: LrConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::Config(format!("train.momentum must lie in [0, 1), got {}", t.momentum)));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        self.method.validate()?;
        self.reweight.validate()?;
        Ok(())
    }
}

/// Per-epoch log row; column order matches `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub bal_acc: f64,
    pub acc_head: f64,
    pub acc_med: f64,
    pub acc_tail: f64,
    pub lr: f64,
    pub rho: f64,
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
    pub nc4: f64,
}

/// Final metrics of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub epochs: usize,
    pub bal_acc: f64,
    pub rho: f64,
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
    pub nc4: f64,
    pub acc_head: f64,
    pub acc_med: f64,
    pub acc_tail: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub records: Vec<EpochRecord>,
    pub summary: RunSummary,
    pub params: ModelParams,
}

/// Group index (0 head, 1 medium, 2 tail) of every class: classes sorted by
/// descending train count (ties by id) and cut into terciles.
pub fn count_groups(counts: &[usize]) -> Vec<usize> {
    let c = counts.len();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut groups = vec![0; c];
    for (rank, &class) in order.iter().enumerate() {
        groups[class] = (3 * rank / c).min(2);
    }
    groups
}

/// Mutable training state carried across epochs.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub velocity: ModelParams,
    pub reweighter: Option<InverseReweighter>,
    pub global_iter: usize,
}

/// Everything fixed for the duration of one run.
#[derive(Clone, Debug)]
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    objective: Objective,
    schedule: Schedule,
    groups: Vec<usize>,
    exec: Execution,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig, train: &'a Dataset, test: &'a Dataset, exec: Execution) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Data("train and test splits must be non-empty".into()));
        }
        if train.class_count() != test.class_count() || train.input_dim() != test.input_dim() {
            return Err(Error::Data(format!(
                "train split has {} classes and {} features, test split has {} and {}",
                train.class_count(),
                train.input_dim(),
                test.class_count(),
                test.input_dim()
            )));
        }
        let counts = train.counts.counts();
        let ipe = train.len().div_ceil(config.train.batch_size);
        Ok(Trainer {
            config,
            train,
            test,
            objective: Objective::new(&config.method, &train.counts)?,
            schedule: config.lr.resolve(config.train.epochs, ipe, counts)?,
            groups: count_groups(counts),
            exec,
        })
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn init_state(&self) -> Result<TrainState> {
        let t = &self.config.train;
        let params = ModelParams::init(self.train.input_dim(), t.hidden_dim, self.train.class_count(), t.seed)?;
        let reweighter = if self.objective.is_inverse() {
            let mut rw = self.config.reweight.clone();
            if let Some(prior) = self.objective.prior_weights() {
                rw.prior_weights = Some(prior.to_vec());
            }
            Some(InverseReweighter::new(rw, self.train.class_count())?)
        } else {
            None
        };
        Ok(TrainState {
            velocity: params.zeros_like(),
            params,
            reweighter,
            global_iter: 0,
        })
    }

    /// One pass over the shuffled training set followed by evaluation.
    pub fn train_epoch(&self, state: &mut TrainState, epoch: usize) -> Result<EpochRecord> {
        let t = &self.config.train;
        let batches = batch_iter(self.train.len(), t.batch_size, epoch_seed(t.seed, epoch));
        let switch = self.config.reweight.switch_epoch;
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            lr = self.schedule.lr(epoch, state.global_iter)?;
            let inputs: Vec<&[f64]> = idx.iter().map(|&i| self.train.samples[i].x.as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| self.train.samples[i].y).collect();
            let forwards = inputs
                .iter()
                .map(|x| state.params.forward(x))
                .collect::<Result<Vec<_>>>()?;
            let (losses, mut dz): (Vec<f64>, Vec<Vec<f64>>) = forwards
                .iter()
                .zip(&labels)
                .map(|(f, &y)| self.objective.sample(f, y, epoch))
                .unzip();

            // Batch loss is (1/m) Σ w_i ℓ_i; ∇ is Σ c_i ∇ℓ_i.
            let m = labels.len() as f64;
            let (weights, coeffs): (Vec<f64>, Vec<f64>) = match state.reweighter.as_mut() {
                Some(rw) if epoch >= switch => {
                    let (solution, coeffs) = rw.step_with_coefficients(&losses, &labels)?;
                    (labels.iter().map(|&y| solution.classes[&y].w_hat).collect(), coeffs)
                }
                Some(rw) => {
                    rw.observe(&labels);
                    (vec![1.0; labels.len()], vec![1.0 / m; labels.len()])
                }
                None => (vec![1.0; labels.len()], vec![1.0 / m; labels.len()]),
            };

            let mut batch_loss = losses.iter().zip(&weights).map(|(l, w)| w * l).sum::<f64>() / m;
            for (g, &c) in dz.iter_mut().zip(&coeffs) {
                g.iter_mut().for_each(|v| *v *= c);
            }
            let dh = match self.objective.range() {
                Some((lambda, params)) if lambda > 0.0 => {
                    let feats: Vec<Vec<f64>> = forwards.iter().map(|f| f.h.clone()).collect();
                    let (terms, mut grad) = range_loss_grad(&feats, &labels, &params)?;
                    batch_loss += lambda * terms.total;
                    grad.iter_mut().flatten().for_each(|v| *v *= lambda);
                    Some(grad)
                }
                _ => None,
            };
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {b} (lr {lr})"
                )));
            }

            let mut grads = backward_from(&state.params, &inputs, &forwards, &dz, dh.as_deref())?;
            if !self.config.train.bias {
                grads.b.fill(0.0);
            }
            sgd_step(&mut state.params, &grads, &mut state.velocity, lr, t.momentum, t.weight_decay)?;
            if !self.config.train.bias {
                state.params.b.fill(0.0);
            }
            if !state.params.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameters after epoch {epoch}, batch {b} (lr {lr}, loss {batch_loss})"
                )));
            }
            loss_sum += batch_loss;
            state.global_iter += 1;
        }
        self.evaluate(&state.params, epoch, loss_sum / batches.len() as f64, lr)
    }

    /// Balanced test accuracy, train-set loss imbalance and NC metrics.
    pub fn evaluate(&self, params: &ModelParams, epoch: usize, train_loss: f64, lr: f64) -> Result<EpochRecord> {
        let c = self.train.class_count();
        let train_out = self.exec.map(&self.train.samples, |s| {
            params.forward(&s.x).map(|f| {
                let loss = ce_loss(&f, s.y);
                (f.h, loss)
            })
        });
        let mut features = Vec::with_capacity(self.train.len());
        let mut class_loss = vec![0.0; c];
        for (out, s) in train_out.into_iter().zip(&self.train.samples) {
            let (h, loss) = out?;
            class_loss[s.y] += loss;
            features.push(h);
        }
        for (l, &n) in class_loss.iter_mut().zip(self.train.counts.counts()) {
            *l /= n as f64;
        }
        let bank = FeatureBank::from_labeled(features, &self.train.labels(), c)?;
        let nc = nc_report(&params.w, &params.b, &bank, Some(&class_loss), epoch, self.exec)?;

        let predictions = self.exec.map(&self.test.samples, |s| params.predict(&s.x));
        let mut correct = vec![0usize; c];
        for (pred, s) in predictions.into_iter().zip(&self.test.samples) {
            correct[s.y] += usize::from(pred? == s.y);
        }
        let recall: Vec<f64> = correct
            .iter()
            .zip(self.test.counts.counts())
            .map(|(&k, &n)| k as f64 / n as f64)
            .collect();
        let group_mean = |g: usize| {
            let vals: Vec<f64> = (0..c).filter(|&k| self.groups[k] == g).map(|k| recall[k]).collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        Ok(EpochRecord {
            epoch,
            train_loss,
            bal_acc: recall.iter().sum::<f64>() / c as f64,
            acc_head: group_mean(0),
            acc_med: group_mean(1),
            acc_tail: group_mean(2),
            lr,
            rho: nc.rho.unwrap_or(0.0),
            nc1: nc.nc1,
            nc2: nc.nc2,
            nc3: nc.nc3,
            nc4: nc.nc4_agreement,
        })
    }
}

/// Full training run for one seed (`config.train.seed`).
pub fn run_experiment(config: &TrainConfig, train: &Dataset, test: &Dataset, exec: Execution) -> Result<RunResult> {
    let trainer = Trainer::new(config, train, test, exec)?;
    let mut state = trainer.init_state()?;
    let mut records = Vec::with_capacity(config.train.epochs);
    for epoch in 0..config.train.epochs {
        records.push(trainer.train_epoch(&mut state, epoch)?);
    }
    let last = records.last().expect("at least one epoch");
    let summary = RunSummary {
        method: config.method.name.to_string(),
        seed: config.train.seed,
        epochs: config.train.epochs,
        bal_acc: last.bal_acc,
        rho: last.rho,
        nc1: last.nc1,
        nc2: last.nc2,
        nc3: last.nc3,
        nc4: last.nc4,
        acc_head: last.acc_head,
        acc_med: last.acc_med,
        acc_tail: last.acc_tail,
    };
    Ok(RunResult {
        records,
        summary,
        params: state.params,
    })
}

/// Seed-mean summary across runs of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub bal_acc_mean: f64,
    pub bal_acc_per_seed: Vec<f64>,
    pub rho_final: f64,
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
    pub nc4: f64,
    pub acc_head: f64,
    pub acc_med: f64,
    pub acc_tail: f64,
}

impl AggregateSummary {
    pub fn from_runs(runs: &[RunSummary]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::domain("no runs to aggregate"))?;
        let methods: BTreeSet<&str> = runs.iter().map(|r| r.method.as_str()).collect();
        if methods.len() != 1 {
            return Err(Error::domain("runs mix different methods"));
        }
        let mean = |f: fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
        Ok(AggregateSummary {
            method: first.method.clone(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            bal_acc_mean: mean(|r| r.bal_acc),
            bal_acc_per_seed: runs.iter().map(|r| r.bal_acc).collect(),
            rho_final: mean(|r| r.rho),
            nc1: mean(|r| r.nc1),
            nc2: mean(|r| r.nc2),
            nc3: mean(|r| r.nc3),
            nc4: mean(|r| r.nc4),
            acc_head: mean(|r| r.acc_head),
            acc_med: mean(|r| r.acc_med),
            acc_tail: mean(|r| r.acc_tail),
        })
    }
}
