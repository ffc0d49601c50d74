//! Learning-rate schedules.
//!
//! The Mittag-Leffler schedule is iteration-level: an optional linear
//! warm-up, then Stage I follows `E_a(−z)` on `z ∈ [0, 1−ε)` through the
//! power series, and Stage II follows the power-law tail `1/(z Γ(1−a))` with
//! `z` running from 1 towards `1/ε`. The two stages are not continuous at the
//! switch point; the jump is kept as is.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

const SERIES_TOL: f64 = 1e-12;
const SERIES_MAX_TERMS: usize = 200;

/// Upper clamp on the tail parameter inside Stage II, where `Γ(1−a)`
/// diverges at `a = 1`.
pub const STAGE_TWO_MAX_TAIL_PARAM: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MlBranch {
    Series,
    Tail,
}

fn check_ml_domain(a: f64, z: f64) -> Result<()> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::domain(format!("Mittag-Leffler parameter a must lie in (0, 1], got {a}")));
    }
    if !(z >= 0.0 && z.is_finite()) {
        return Err(Error::domain(format!("Mittag-Leffler argument z must be >= 0, got {z}")));
    }
    Ok(())
}

/// Truncated series `Σ (−z)^k / Γ(ak+1)`, stopping once a term falls below
/// `1e-12` in magnitude or after 200 terms.
pub fn ml_series(a: f64, z: f64) -> Result<f64> {
    check_ml_domain(a, z)?;
    if z == 0.0 {
        return Ok(1.0);
    }
    let ln_z = z.ln();
    let mut sum = 0.0;
    for k in 0..SERIES_MAX_TERMS {
        let kf = k as f64;
        let magnitude = (kf * ln_z - ln_gamma(a * kf + 1.0)).exp();
        let term = if k % 2 == 0 { magnitude } else { -magnitude };
        sum += term;
        if magnitude < SERIES_TOL {
            break;
        }
    }
    Ok(sum)
}

/// Asymptotic tail `1 / (z Γ(1−a))`; zero at `a = 1`.
pub fn ml_tail(a: f64, z: f64) -> Result<f64> {
    check_ml_domain(a, z)?;
    if z == 0.0 {
        return Err(Error::domain("the tail form is undefined at z = 0"));
    }
    if a == 1.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (z * gamma(1.0 - a)))
}

/// `E_a(−z)` by the piecewise rule: series for `z < 1`, tail for `z >= 1`.
pub fn mittag_leffler_branch(a: f64, z: f64) -> Result<(f64, MlBranch)> {
    check_ml_domain(a, z)?;
    if z < 1.0 {
        Ok((ml_series(a, z)?, MlBranch::Series))
    } else {
        Ok((ml_tail(a, z)?, MlBranch::Tail))
    }
}

pub fn mittag_leffler(a: f64, z: f64) -> Result<f64> {
    mittag_leffler_branch(a, z).map(|(v, _)| v)
}

/// Tail parameter from the normalized entropy of class counts:
/// `a = 0.25 + 0.75 H / ln C`, with `0 ln 0 = 0`.
pub fn entropy_alpha(counts: &[usize]) -> Result<f64> {
    if counts.len() < 2 {
        return Err(Error::domain("entropy-adaptive tail needs at least 2 classes"));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::domain("class counts sum to zero"));
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    let h_norm = (h / (counts.len() as f64).ln()).clamp(0.0, 1.0);
    Ok(0.25 + 0.75 * h_norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MileLrConfig {
    pub eta0: f64,
    pub total_epochs: usize,
    pub iters_per_epoch: usize,
    pub warmup_epochs: usize,
    pub lr_switch_epoch: f64,
    pub tail_param: f64,
    pub eps: f64,
    total_iters: usize,
    warmup_iters: usize,
    horizon: usize,
    switch_iters: usize,
}

impl MileLrConfig {
    pub fn new(
        eta0: f64,
        total_epochs: usize,
        iters_per_epoch: usize,
        warmup_epochs: usize,
        lr_switch_epoch: f64,
        tail_param: f64,
        eps: f64,
    ) -> Result<Self> {
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::Config(format!("lr.eta0 must be positive, got {eta0}")));
        }
        if !(tail_param > 0.0 && tail_param <= 1.0) {
            return Err(Error::Config(format!("lr tail parameter must lie in (0, 1], got {tail_param}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("lr.eps must lie in (0, 1), got {eps}")));
        }
        if !(lr_switch_epoch >= 0.0 && lr_switch_epoch.is_finite()) {
            return Err(Error::Config("lr.switch_epoch must be non-negative".into()));
        }
        if iters_per_epoch == 0 {
            return Err(Error::Config("iters_per_epoch must be at least 1".into()));
        }
        let total_iters = total_epochs * iters_per_epoch;
        let warmup_iters = warmup_epochs * iters_per_epoch;
        if total_iters <= warmup_iters {
            return Err(Error::Config(format!(
                "warm-up ({warmup_epochs} epochs) leaves no post-warm-up iterations out of {total_epochs} epochs"
            )));
        }
        let switch_raw = (lr_switch_epoch * iters_per_epoch as f64).floor() as usize;
        Ok(MileLrConfig {
            eta0,
            total_epochs,
            iters_per_epoch,
            warmup_epochs,
            lr_switch_epoch,
            tail_param,
            eps,
            total_iters,
            warmup_iters,
            horizon: total_iters - warmup_iters,
            switch_iters: switch_raw.saturating_sub(warmup_iters),
        })
    }

    pub fn total_iters(&self) -> usize {
        self.total_iters
    }

    pub fn warmup_iters(&self) -> usize {
        self.warmup_iters
    }

    /// Post-warm-up horizon `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Switch point `T_s` in post-warm-up iterations.
    pub fn switch_iters(&self) -> usize {
        self.switch_iters
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MileStage {
    Warmup,
    Early,
    Late,
}

/// Learning rate and stage at global iteration `t`.
pub fn mile_lr_stage(t: usize, cfg: &MileLrConfig) -> Result<(f64, MileStage)> {
    if t >= cfg.total_iters {
        return Err(Error::domain(format!(
            "iteration {t} outside schedule of {} iterations",
            cfg.total_iters
        )));
    }
    if t < cfg.warmup_iters {
        return Ok((
            cfg.eta0 * (t + 1) as f64 / cfg.warmup_iters as f64,
            MileStage::Warmup,
        ));
    }
    let tau = t - cfg.warmup_iters;
    if tau < cfg.switch_iters {
        let z1 = (1.0 - cfg.eps) * tau as f64 / cfg.switch_iters.max(1) as f64;
        return Ok((cfg.eta0 * ml_series(cfg.tail_param, z1)?, MileStage::Early));
    }
    let tau2 = (tau - cfg.switch_iters) as f64;
    let t2 = cfg.horizon.saturating_sub(cfg.switch_iters).max(1) as f64;
    let s2 = (tau2 / t2).min(1.0 - cfg.eps);
    let z2 = 1.0 + s2 / (1.0 - s2 + cfg.eps);
    let a = cfg.tail_param.min(STAGE_TWO_MAX_TAIL_PARAM);
    Ok((cfg.eta0 / (z2 * gamma(1.0 - a)), MileStage::Late))
}

pub fn mile_lr_at(t: usize, cfg: &MileLrConfig) -> Result<f64> {
    mile_lr_stage(t, cfg).map(|(lr, _)| lr)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiStepConfig {
    pub eta0: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl MultiStepConfig {
    pub fn new(eta0: f64, milestones: Vec<usize>, decay: f64) -> Result<Self> {
        if !(eta0 > 0.0) {
            return Err(Error::Config(format!("lr.eta0 must be positive, got {eta0}")));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("lr.decay must lie in (0, 1), got {decay}")));
        }
        if milestones.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("lr.milestones must be strictly increasing".into()));
        }
        Ok(MultiStepConfig {
            eta0,
            milestones,
            decay,
        })
    }
}

/// `η₀ · decay^{#milestones ≤ epoch}`.
pub fn multistep_lr_at(epoch: usize, cfg: &MultiStepConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.eta0 * cfg.decay.powi(passed as i32)
}

/// A schedule resolved against a concrete run length.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    Mile(MileLrConfig),
    MultiStep(MultiStepConfig),
}

impl Schedule {
    pub fn lr(&self, epoch: usize, global_iter: usize) -> Result<f64> {
        match self {
            Schedule::Mile(cfg) => mile_lr_at(global_iter, cfg),
            Schedule::MultiStep(cfg) => Ok(multistep_lr_at(epoch, cfg)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Mile,
    Multistep,
}

/// Fixed tail parameter or `"entropy"` for the count-adaptive value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TailParam {
    Fixed(f64),
    Named(String),
}

impl TailParam {
    pub fn resolve(&self, counts: &[usize]) -> Result<f64> {
        match self {
            TailParam::Fixed(a) => Ok(*a),
            TailParam::Named(s) if s == "entropy" => entropy_alpha(counts),
            TailParam::Named(s) => Err(Error::Config(format!(
                "lr.alpha must be a number in (0, 1] or \"entropy\", got {s:?}"
            ))),
        }
    }
}

/// Schedule settings as written in a config file, before the run length is
/// known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrConfig {
    pub schedule: ScheduleKind,
    pub eta0: f64,
    pub warmup_epochs: usize,
    /// Stage I to Stage II handoff; 80% of the run when absent.
    pub switch_epoch: Option<f64>,
    pub alpha: TailParam,
    pub eps: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            schedule: ScheduleKind::Mile,
            eta0: 0.1,
            warmup_epochs: 0,
            switch_epoch: None,
            alpha: TailParam::Named("entropy".into()),
            eps: 1e-3,
            milestones: Vec::new(),
            decay: 0.1,
        }
    }
}

impl LrConfig {
    pub fn resolve(&self, total_epochs: usize, iters_per_epoch: usize, counts: &[usize]) -> Result<Schedule> {
        match self.schedule {
            ScheduleKind::Mile => {
                let switch = self.switch_epoch.unwrap_or(0.8 * total_epochs as f64);
                Ok(Schedule::Mile(MileLrConfig::new(
                    self.eta0,
                    total_epochs,
                    iters_per_epoch,
                    self.warmup_epochs,
                    switch,
                    self.alpha.resolve(counts)?,
                    self.eps,
                )?))
            }
            ScheduleKind::Multistep => Ok(Schedule::MultiStep(MultiStepConfig::new(
                self.eta0,
                self.milestones.clone(),
                self.decay,
            )?)),
        }
    }
}
