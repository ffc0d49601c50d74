//! Per-sample objectives for every training method.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{ce_logit_grad, ce_loss, Forward};
use crate::baselines::{
    cb_weights, ib_class_coefficients, ib_factor, inv_freq_weights, inv_sqrt_weights, ClassCounts,
    RangeParams,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Ce,
    InvFreq,
    InvSqrt,
    Cb,
    Focal,
    Ib,
    Range,
    Inverse,
}

impl MethodName {
    pub const ALL: [MethodName; 8] = [
        MethodName::Ce,
        MethodName::InvFreq,
        MethodName::InvSqrt,
        MethodName::Cb,
        MethodName::Focal,
        MethodName::Ib,
        MethodName::Range,
        MethodName::Inverse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Ce => "ce",
            MethodName::InvFreq => "inv_freq",
            MethodName::InvSqrt => "inv_sqrt",
            MethodName::Cb => "cb",
            MethodName::Focal => "focal",
            MethodName::Ib => "ib",
            MethodName::Range => "range",
            MethodName::Inverse => "inverse",
        }
    }

    fn is_class_weighted(self) -> bool {
        matches!(self, MethodName::InvFreq | MethodName::InvSqrt | MethodName::Cb)
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = MethodName::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!("unknown method {s:?}; valid methods: {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub name: MethodName,
    /// Base loss under `inverse`.
    pub base: MethodName,
    /// Under `inverse` with a class-weight base, use the base weights as the
    /// Tikhonov prior instead of multiplying them into the loss.
    pub prior_from_base: bool,
    pub cb_beta: f64,
    pub focal_gamma: f64,
    pub focal_alpha: Option<f64>,
    pub focal_p_floor: Option<f64>,
    /// Sum of the IB class coefficients; the class count when absent.
    pub ib_alpha: Option<f64>,
    pub ib_eps: f64,
    /// Plain cross-entropy before this epoch.
    pub ib_start_epoch: usize,
    pub range_lambda: f64,
    pub range_k: usize,
    pub range_margin: f64,
    pub range_alpha: f64,
    pub range_beta: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            name: MethodName::Ce,
            base: MethodName::Ce,
            prior_from_base: false,
            cb_beta: 0.9999,
            focal_gamma: 2.0,
            focal_alpha: None,
            focal_p_floor: None,
            ib_alpha: None,
            ib_eps: 1e-3,
            ib_start_epoch: 0,
            range_lambda: 0.1,
            range_k: 2,
            range_margin: 1.0,
            range_alpha: 1.0,
            range_beta: 1.0,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base == MethodName::Inverse {
            return Err(Error::Config("method.base cannot be \"inverse\"".into()));
        }
        if !(0.0..1.0).contains(&self.cb_beta) {
            return Err(Error::Config(format!("method.cb_beta must lie in [0, 1), got {}", self.cb_beta)));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("method.focal_gamma must be >= 0".into()));
        }
        if let Some(a) = self.focal_alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config("method.focal_alpha must lie in [0, 1]".into()));
            }
        }
        if let Some(f) = self.focal_p_floor {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config("method.focal_p_floor must lie in (0, 1)".into()));
            }
        }
        if let Some(a) = self.ib_alpha {
            if !(a > 0.0) {
                return Err(Error::Config("method.ib_alpha must be positive".into()));
            }
        }
        if !(self.ib_eps > 0.0) {
            return Err(Error::Config("method.ib_eps must be positive".into()));
        }
        if self.range_k == 0 {
            return Err(Error::Config("method.range_k must be at least 1".into()));
        }
        if !(self.range_lambda >= 0.0 && self.range_alpha >= 0.0 && self.range_beta >= 0.0) {
            return Err(Error::Config("range loss coefficients must be non-negative".into()));
        }
        if !(self.range_margin > 0.0) {
            return Err(Error::Config("method.range_margin must be positive".into()));
        }
        Ok(())
    }

    /// The loss family actually evaluated per sample.
    pub fn base_loss(&self) -> MethodName {
        if self.name == MethodName::Inverse {
            self.base
        } else {
            self.name
        }
    }
}

/// Rescale to unit mean over classes.
fn unit_mean(w: Vec<f64>) -> Vec<f64> {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.into_iter().map(|x| x / mean).collect()
}

/// Method configuration resolved against the training class counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    config: MethodConfig,
    class_weights: Vec<f64>,
    prior_weights: Option<Vec<f64>>,
    ib_coefficients: Vec<f64>,
}

impl Objective {
    pub fn new(config: &MethodConfig, counts: &ClassCounts) -> Result<Self> {
        config.validate()?;
        let base = config.base_loss();
        let c = counts.class_count();
        let baseline = match base {
            MethodName::InvFreq => Some(unit_mean(inv_freq_weights(counts))),
            MethodName::InvSqrt => Some(unit_mean(inv_sqrt_weights(counts))),
            MethodName::Cb => Some(unit_mean(cb_weights(counts, config.cb_beta)?)),
            _ => None,
        };
        let composing = config.name == MethodName::Inverse && config.prior_from_base && base.is_class_weighted();
        let (class_weights, prior_weights) = match baseline {
            Some(w) if composing => (vec![1.0; c], Some(w)),
            Some(w) => (w, None),
            None => (vec![1.0; c], None),
        };
        let ib_coefficients = if base == MethodName::Ib {
            ib_class_coefficients(counts, config.ib_alpha.unwrap_or(c as f64))?
        } else {
            Vec::new()
        };
        Ok(Objective {
            config: config.clone(),
            class_weights,
            prior_weights,
            ib_coefficients,
        })
    }

    pub fn config(&self) -> &MethodConfig {
        &self.config
    }

    pub fn is_inverse(&self) -> bool {
        self.config.name == MethodName::Inverse
    }

    /// Static per-class multipliers of the base loss.
    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    /// Prior `w⁽⁰⁾` taken from the base method when composing.
    pub fn prior_weights(&self) -> Option<&[f64]> {
        self.prior_weights.as_deref()
    }

    /// Batch-level range term, when the base loss carries one.
    pub fn range(&self) -> Option<(f64, RangeParams)> {
        (self.config.base_loss() == MethodName::Range).then(|| {
            (
                self.config.range_lambda,
                RangeParams {
                    k: self.config.range_k,
                    margin: self.config.range_margin,
                    alpha: self.config.range_alpha,
                    beta: self.config.range_beta,
                },
            )
        })
    }

    /// Base per-sample loss (class weight included) and its logit gradient.
    pub fn sample(&self, f: &Forward, target: usize, epoch: usize) -> (f64, Vec<f64>) {
        let cw = self.class_weights[target];
        let (loss, mut dz) = match self.config.base_loss() {
            MethodName::Focal => focal_terms(f, target, &self.config),
            MethodName::Ib if epoch >= self.config.ib_start_epoch => {
                let s = self.ib_coefficients[target] / (ib_factor(&f.p, target, &f.h) + self.config.ib_eps);
                let g = ce_logit_grad(f, target).into_iter().map(|g| s * g).collect();
                (s * ce_loss(f, target), g)
            }
            _ => (ce_loss(f, target), ce_logit_grad(f, target)),
        };
        if cw != 1.0 {
            dz.iter_mut().for_each(|g| *g *= cw);
        }
        (cw * loss, dz)
    }
}

/// Focal loss and its logit gradient. With `q = 1 − p_t`,
/// `∂ℓ/∂z_k = α [γ q^{γ−1} p_t ln p_t − q^γ] (δ_{k,t} − p_k)`.
fn focal_terms(f: &Forward, target: usize, cfg: &MethodConfig) -> (f64, Vec<f64>) {
    let alpha = cfg.focal_alpha.unwrap_or(1.0);
    let gamma = cfg.focal_gamma;
    let mut ln_p = -ce_loss(f, target);
    let mut floored = false;
    if let Some(floor) = cfg.focal_p_floor {
        if ln_p < floor.ln() {
            ln_p = floor.ln();
            floored = true;
        }
    }
    let p = ln_p.exp();
    let q = 1.0 - p;
    let loss = -alpha * q.powf(gamma) * ln_p;
    if floored {
        return (loss, vec![0.0; f.z.len()]);
    }
    let slope = if q > 0.0 { gamma * q.powf(gamma - 1.0) * p * ln_p } else { 0.0 };
    let s = alpha * (slope - q.powf(gamma));
    let dz = f
        .p
        .iter()
        .enumerate()
        .map(|(k, &pk)| s * (if k == target { 1.0 } else { 0.0 } - pk))
        .collect();
    (loss, dz)
}
