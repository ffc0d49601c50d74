//! Inverse-view class reweighting.
//!
//! Per-class weights are the minimizers of the Tikhonov-regularized
//! equalization objective
//!
//! ```text
//! φ_c(w) = (w L_c − L̄)² + α (w − w⁽⁰⁾_c)²
//! ```
//!
//! whose unique solution is `w*_c = (L̄ L_c + α w⁽⁰⁾_c) / (L_c² + α)`. During
//! training `L_c` and `L̄` are estimated per mini-batch, and the weights are
//! multiplied by a macro factor `β_c ∝ B_c^{−γ}` (unit mean over the classes
//! in the batch), `B_c` counting the mini-batches in which class `c` appeared.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = usize;

/// Class-wise loss imbalance coefficient: population standard deviation of
/// the class losses over their mean. Zero when the mean is zero.
pub fn loss_imbalance_rho(class_losses: &[f64]) -> Result<f64> {
    if class_losses.is_empty() {
        return Err(Error::domain("loss imbalance of an empty loss list"));
    }
    if let Some(bad) = class_losses.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::domain(format!(
            "class losses must be finite and non-negative, got {bad}"
        )));
    }
    let n = class_losses.len() as f64;
    let mean = class_losses.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let var = class_losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Minimizer of `(w L_c − L̄)² + α (w − w0)²`. With `α = 0` and `L_c = 0`
/// the objective is flat and the prior `w0` is returned.
pub fn closed_form_weight(class_loss: f64, mean_loss: f64, alpha: f64, prior: f64) -> f64 {
    let denom = class_loss * class_loss + alpha;
    if denom == 0.0 {
        return prior;
    }
    (mean_loss * class_loss + alpha * prior) / denom
}

/// Partial derivatives of `w*·L_c` with respect to `(L_c, L̄)`. At the
/// `α = 0, L_c = 0` fallback the weight is the constant prior.
pub fn weighted_loss_partials(class_loss: f64, mean_loss: f64, alpha: f64, prior: f64) -> (f64, f64) {
    let l = class_loss;
    let denom = l * l + alpha;
    if denom == 0.0 {
        return (prior, 0.0);
    }
    let d_l = alpha * (2.0 * mean_loss * l + alpha * prior - prior * l * l) / (denom * denom);
    (d_l, l * l / denom)
}

/// Per-class mean losses over the classes present in one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassLossStats {
    means: BTreeMap<ClassId, f64>,
    batch_mean: f64,
}

impl ClassLossStats {
    pub fn means(&self) -> &BTreeMap<ClassId, f64> {
        &self.means
    }

    pub fn batch_mean(&self) -> f64 {
        self.batch_mean
    }

    pub fn present(&self) -> BTreeSet<ClassId> {
        self.means.keys().copied().collect()
    }
}

pub fn batch_class_stats(per_sample_losses: &[f64], labels: &[ClassId]) -> Result<ClassLossStats> {
    if per_sample_losses.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} losses but {} labels",
            per_sample_losses.len(),
            labels.len()
        )));
    }
    if per_sample_losses.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let mut sums: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
    for (&l, &y) in per_sample_losses.iter().zip(labels) {
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::Numeric(format!(
                "per-sample loss {l} for class {y} is not a finite non-negative value"
            )));
        }
        let e = sums.entry(y).or_insert((0.0, 0));
        e.0 += l;
        e.1 += 1;
    }
    let means: BTreeMap<ClassId, f64> = sums
        .into_iter()
        .map(|(c, (s, n))| (c, s / n as f64))
        .collect();
    let batch_mean = means.values().sum::<f64>() / means.len() as f64;
    Ok(ClassLossStats { means, batch_mean })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReweightConfig {
    /// Tikhonov strength.
    pub alpha: f64,
    /// Macro compensation exponent.
    pub gamma: f64,
    /// `w⁽⁰⁾` per class; all ones when absent.
    pub prior_weights: Option<Vec<f64>>,
    /// Reweighting is inactive before this epoch.
    pub switch_epoch: usize,
    /// Use the closed-form batch-wise weights (otherwise `w* = 1`).
    pub batch_wise: bool,
    /// Use the macro-level factors (otherwise `β = 1`).
    pub macro_level: bool,
    /// How the batch weights enter the parameter gradient.
    pub weight_gradient: WeightGradient,
}

/// `Detached` treats `ŵ` as constants; `Total` also differentiates
/// `w*(L̂_c, L̂_avg)` through the batch losses. `β` is a constant in both.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightGradient {
    Detached,
    #[default]
    Total,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        ReweightConfig {
            alpha: 0.0,
            gamma: 1.0,
            prior_weights: None,
            switch_epoch: 0,
            batch_wise: true,
            macro_level: true,
            weight_gradient: WeightGradient::default(),
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("reweight alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("reweight gamma must be >= 0, got {}", self.gamma)));
        }
        if let Some(w) = &self.prior_weights {
            if w.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::Config("prior weights must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn prior(&self, class: ClassId) -> f64 {
        self.prior_weights
            .as_ref()
            .and_then(|w| w.get(class).copied())
            .unwrap_or(1.0)
    }
}

/// Number of mini-batches each class has appeared in.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MacroState {
    batch_counts: Vec<u64>,
}

impl MacroState {
    pub fn new(class_count: usize) -> Self {
        MacroState {
            batch_counts: vec![0; class_count],
        }
    }

    pub fn from_counts(batch_counts: Vec<u64>) -> Self {
        MacroState { batch_counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.batch_counts
    }

    pub fn count(&self, class: ClassId) -> u64 {
        self.batch_counts.get(class).copied().unwrap_or(0)
    }

    /// Increment `B_c` once for every class in `present`.
    pub fn update<'a>(&mut self, present: impl IntoIterator<Item = &'a ClassId>) {
        for &c in present {
            if c >= self.batch_counts.len() {
                self.batch_counts.resize(c + 1, 0);
            }
            self.batch_counts[c] += 1;
        }
    }
}

/// `β_c = B_c^{−γ}`, rescaled to unit mean over the present classes.
pub fn macro_factors(
    state: &MacroState,
    present: &BTreeSet<ClassId>,
    gamma: f64,
) -> Result<BTreeMap<ClassId, f64>> {
    if present.is_empty() {
        return Err(Error::domain("no classes present"));
    }
    let mut raw = BTreeMap::new();
    for &c in present {
        let b = state.count(c);
        if b == 0 {
            return Err(Error::domain(format!(
                "class {c} is present but its batch counter is 0; update counters first"
            )));
        }
        raw.insert(c, (b as f64).powf(-gamma));
    }
    let mean = raw.values().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|(c, r)| (c, r / mean)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassWeight {
    pub w_star: f64,
    pub beta: f64,
    pub w_hat: f64,
}

/// Weights for the classes present in one batch, keyed by class id.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightSolution {
    pub classes: BTreeMap<ClassId, ClassWeight>,
}

impl WeightSolution {
    pub fn effective(&self, class: ClassId) -> Option<f64> {
        self.classes.get(&class).map(|w| w.w_hat)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }
}

/// Closed-form weights (using the batch mean of class means as `L̄`) times
/// macro factors. Counters must already include the current batch.
pub fn effective_weights(
    stats: &ClassLossStats,
    state: &MacroState,
    config: &ReweightConfig,
) -> Result<WeightSolution> {
    let present = stats.present();
    let betas = if config.macro_level {
        macro_factors(state, &present, config.gamma)?
    } else {
        present.iter().map(|&c| (c, 1.0)).collect()
    };
    let classes = stats
        .means
        .iter()
        .map(|(&c, &l)| {
            let w_star = if config.batch_wise {
                closed_form_weight(l, stats.batch_mean, config.alpha, config.prior(c))
            } else {
                1.0
            };
            let beta = betas[&c];
            (
                c,
                ClassWeight {
                    w_star,
                    beta,
                    w_hat: beta * w_star,
                },
            )
        })
        .collect();
    Ok(WeightSolution { classes })
}

/// Coefficients `c_i` with `∇L_B = Σ_i c_i ∇ℓ_i` for
/// `L_B = (1/m) Σ ŵ_{y_i} ℓ_i`. Under `Detached` this is `ŵ_{y_i}/m`; under
/// `Total` the weights are differentiated through `L̂_c` and `L̂_avg`.
pub fn gradient_coefficients(
    stats: &ClassLossStats,
    solution: &WeightSolution,
    labels: &[ClassId],
    config: &ReweightConfig,
) -> Result<Vec<f64>> {
    let m = labels.len() as f64;
    let weight = |y: ClassId| {
        solution
            .classes
            .get(&y)
            .copied()
            .ok_or_else(|| Error::domain(format!("no weight for class {y}")))
    };
    if config.weight_gradient == WeightGradient::Detached {
        return labels.iter().map(|&y| weight(y).map(|w| w.w_hat / m)).collect();
    }
    let mut n = BTreeMap::new();
    for &y in labels {
        *n.entry(y).or_insert(0usize) += 1;
    }
    // With L_B = (1/m) Σ_c n_c β_c f_c(L̂_c, L̂_avg) and f_c = w*_c L̂_c:
    // c_i = (1/m) [β_y ∂f_y/∂L_y + Σ_c n_c β_c ∂f_c/∂L̄ / (K n_y)].
    let mut own = BTreeMap::new();
    let mut shared = 0.0;
    for (&c, &l) in &stats.means {
        let beta = weight(c)?.beta;
        let (d_l, d_bar) = if config.batch_wise {
            weighted_loss_partials(l, stats.batch_mean, config.alpha, config.prior(c))
        } else {
            (1.0, 0.0)
        };
        own.insert(c, beta * d_l);
        shared += *n.get(&c).unwrap_or(&0) as f64 * beta * d_bar;
    }
    let k = stats.means.len() as f64;
    labels
        .iter()
        .map(|&y| {
            let own = *own.get(&y).ok_or_else(|| Error::domain(format!("no loss statistics for class {y}")))?;
            Ok((own + shared / (k * n[&y] as f64)) / m)
        })
        .collect()
}

/// `(1/m) Σ ŵ_{y_i} ℓ_i`.
pub fn reweighted_batch_loss(
    per_sample_losses: &[f64],
    labels: &[ClassId],
    solution: &WeightSolution,
) -> Result<f64> {
    if per_sample_losses.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} losses but {} labels",
            per_sample_losses.len(),
            labels.len()
        )));
    }
    if per_sample_losses.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let mut total = 0.0;
    for (&l, &y) in per_sample_losses.iter().zip(labels) {
        let w = solution
            .effective(y)
            .ok_or_else(|| Error::domain(format!("no weight for class {y}")))?;
        total += w * l;
    }
    Ok(total / per_sample_losses.len() as f64)
}

/// Batch-wise inverse reweighting with macro-level compensation: owns the
/// batch-appearance counters across the whole run.
#[derive(Clone, Debug)]
pub struct InverseReweighter {
    config: ReweightConfig,
    state: MacroState,
}

impl InverseReweighter {
    pub fn new(config: ReweightConfig, class_count: usize) -> Result<Self> {
        config.validate()?;
        Ok(InverseReweighter {
            config,
            state: MacroState::new(class_count),
        })
    }

    pub fn config(&self) -> &ReweightConfig {
        &self.config
    }

    pub fn state(&self) -> &MacroState {
        &self.state
    }

    /// Count the classes of a batch without computing weights.
    pub fn observe(&mut self, labels: &[ClassId]) {
        let present: BTreeSet<ClassId> = labels.iter().copied().collect();
        self.state.update(&present);
    }

    /// Update counters, estimate per-class mean losses, and return the
    /// effective weights for this batch.
    pub fn step(&mut self, per_sample_losses: &[f64], labels: &[ClassId]) -> Result<WeightSolution> {
        let stats = batch_class_stats(per_sample_losses, labels)?;
        self.state.update(stats.means.keys());
        effective_weights(&stats, &self.state, &self.config)
    }

    /// [`step`](Self::step) plus the per-sample gradient coefficients of the
    /// reweighted batch loss.
    pub fn step_with_coefficients(
        &mut self,
        per_sample_losses: &[f64],
        labels: &[ClassId],
    ) -> Result<(WeightSolution, Vec<f64>)> {
        let stats = batch_class_stats(per_sample_losses, labels)?;
        self.state.update(stats.means.keys());
        let solution = effective_weights(&stats, &self.state, &self.config)?;
        let coeffs = gradient_coefficients(&stats, &solution, labels, &self.config)?;
        Ok((solution, coeffs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch_loss_at(losses: &[f64], labels: &[ClassId], state: &MacroState, cfg: &ReweightConfig) -> f64 {
        let stats = batch_class_stats(losses, labels).unwrap();
        let sol = effective_weights(&stats, state, cfg).unwrap();
        reweighted_batch_loss(losses, labels, &sol).unwrap()
    }

    #[test]
    fn total_coefficients_match_finite_differences() {
        let losses = [0.7, 1.9, 0.2, 2.4, 1.1, 0.05, 3.0];
        let labels = [0, 1, 0, 2, 1, 3, 2];
        let state = MacroState::from_counts(vec![9, 4, 2, 1]);
        for (alpha, batch_wise) in [(0.0, true), (0.3, true), (2.0, true), (0.0, false)] {
            let cfg = ReweightConfig {
                alpha,
                batch_wise,
                prior_weights: Some(vec![1.0, 0.5, 2.0, 1.5]),
                weight_gradient: WeightGradient::Total,
                ..Default::default()
            };
            let stats = batch_class_stats(&losses, &labels).unwrap();
            let sol = effective_weights(&stats, &state, &cfg).unwrap();
            let c = gradient_coefficients(&stats, &sol, &labels, &cfg).unwrap();
            for i in 0..losses.len() {
                let h = 1e-6;
                let mut up = losses;
                let mut dn = losses;
                up[i] += h;
                dn[i] -= h;
                let fd = (batch_loss_at(&up, &labels, &state, &cfg) - batch_loss_at(&dn, &labels, &state, &cfg)) / (2.0 * h);
                assert!((fd - c[i]).abs() < 1e-8, "alpha {alpha}, i {i}: {fd} vs {}", c[i]);
            }
            let detached = ReweightConfig { weight_gradient: WeightGradient::Detached, ..cfg };
            let d = gradient_coefficients(&stats, &sol, &labels, &detached).unwrap();
            for (di, &y) in d.iter().zip(&labels) {
                assert_eq!(*di, sol.classes[&y].w_hat / 7.0);
            }
        }
    }

    #[test]
    fn total_gradient_at_zero_alpha_is_balanced_mean() {
        // w*·L̂_c = L̂_avg, so L_B = (Σ_c n_c β_c / m) · L̂_avg.
        let losses = [0.4, 1.0, 2.0, 0.1];
        let labels = [0, 0, 1, 2];
        let state = MacroState::from_counts(vec![1, 1, 1]);
        let cfg = ReweightConfig { weight_gradient: WeightGradient::Total, ..Default::default() };
        let stats = batch_class_stats(&losses, &labels).unwrap();
        let sol = effective_weights(&stats, &state, &cfg).unwrap();
        let c = gradient_coefficients(&stats, &sol, &labels, &cfg).unwrap();
        let expected = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in c.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    // Golden-section search on φ_c over a bracket.
    fn golden_minimize(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        while hi - lo > tol {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = f(x2);
            }
        }
        (lo + hi) / 2.0
    }

    #[test]
    fn rho_examples_and_errors() {
        assert_eq!(loss_imbalance_rho(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((loss_imbalance_rho(&[1.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(loss_imbalance_rho(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(loss_imbalance_rho(&[]).is_err());
        assert!(loss_imbalance_rho(&[1.0, -0.1]).is_err());
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_weight(2.0, 1.0, 0.0, 1.0), 0.5);
        assert_eq!(closed_form_weight(1.0, 1.0, 5.0, 1.0), 1.0);
        assert_eq!(closed_form_weight(0.0, 1.0, 0.0, 0.7), 0.7);
        let w = closed_form_weight(2.0, 1.5, 0.1, 1.0);
        assert!((w - 3.1 / 4.1).abs() < 1e-15);
        let phi = |x: f64| (x * 2.0 - 1.5).powi(2) + 0.1 * (x - 1.0).powi(2);
        let oracle = golden_minimize(phi, -10.0, 10.0, 1e-10);
        assert!((oracle - w).abs() < 1e-9);
        assert!((w - 0.756098).abs() < 1e-6);
    }

    #[test]
    fn batch_stats_examples() {
        let s = batch_class_stats(&[1.0, 3.0], &[0, 0]).unwrap();
        assert_eq!(s.means()[&0], 2.0);
        assert_eq!(s.batch_mean(), 2.0);
        let s = batch_class_stats(&[1.0, 2.0, 6.0], &[0, 0, 1]).unwrap();
        assert_eq!(s.means()[&0], 1.5);
        assert_eq!(s.means()[&1], 6.0);
        assert_eq!(s.batch_mean(), 3.75);
        let s = batch_class_stats(&[0.42], &[7]).unwrap();
        assert_eq!(s.means()[&7], 0.42);
        assert!(batch_class_stats(&[1.0], &[0, 1]).is_err());
    }

    #[test]
    fn counters() {
        let mut st = MacroState::new(2);
        st.update(&[0]);
        assert_eq!(st.counts(), &[1, 0]);
        let mut st = MacroState::from_counts(vec![4, 1]);
        st.update(&[0, 1]);
        assert_eq!(st.counts(), &[5, 2]);
        st.update(&[1]);
        st.update(&[1]);
        assert_eq!(st.counts(), &[5, 4]);
    }

    #[test]
    fn macro_factor_examples() {
        let st = MacroState::from_counts(vec![4, 1]);
        let present: BTreeSet<_> = [0, 1].into();
        let b = macro_factors(&st, &present, 1.0).unwrap();
        assert!((b[&0] - 0.4).abs() < 1e-15 && (b[&1] - 1.6).abs() < 1e-15);
        let b = macro_factors(&st, &present, 0.0).unwrap();
        assert!(b.values().all(|&x| x == 1.0));
        let b = macro_factors(&MacroState::from_counts(vec![3, 3, 3]), &[0, 1, 2].into(), 2.5).unwrap();
        assert!(b.values().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!(macro_factors(&MacroState::from_counts(vec![0, 2]), &present, 1.0).is_err());
    }

    #[test]
    fn effective_weight_examples() {
        let cfg = ReweightConfig::default();
        let stats = batch_class_stats(&[1.0, 3.0], &[0, 1]).unwrap();
        let sol = effective_weights(&stats, &MacroState::from_counts(vec![1, 1]), &cfg).unwrap();
        assert_eq!(sol.classes[&0].w_hat, 2.0);
        assert!((sol.classes[&1].w_hat - 2.0 / 3.0).abs() < 1e-15);

        let sol = effective_weights(&stats, &MacroState::from_counts(vec![4, 1]), &cfg).unwrap();
        assert!((sol.classes[&0].w_hat - 0.8).abs() < 1e-15);
        assert!((sol.classes[&1].w_hat - 16.0 / 15.0).abs() < 1e-15);
        for w in sol.classes.values() {
            assert!((w.w_hat - w.beta * w.w_star).abs() < 1e-12);
        }

        let equal = batch_class_stats(&[0.7, 0.7, 0.7], &[0, 1, 2]).unwrap();
        let cfg = ReweightConfig { alpha: 3.0, gamma: 0.7, ..Default::default() };
        let sol = effective_weights(&equal, &MacroState::from_counts(vec![5, 5, 5]), &cfg).unwrap();
        assert!(sol.classes.values().all(|w| (w.w_hat - 1.0).abs() < 1e-15));
    }

    #[test]
    fn ablation_switches() {
        let stats = batch_class_stats(&[1.0, 3.0], &[0, 1]).unwrap();
        let st = MacroState::from_counts(vec![4, 1]);
        let macro_only = ReweightConfig { batch_wise: false, ..Default::default() };
        let sol = effective_weights(&stats, &st, &macro_only).unwrap();
        assert_eq!(sol.classes[&0].w_star, 1.0);
        assert!((sol.classes[&1].w_hat - 1.6).abs() < 1e-15);
        let batch_only = ReweightConfig { macro_level: false, ..Default::default() };
        let sol = effective_weights(&stats, &st, &batch_only).unwrap();
        assert_eq!(sol.classes[&0].beta, 1.0);
        assert_eq!(sol.classes[&0].w_hat, 2.0);
    }

    #[test]
    fn batch_loss_examples() {
        let mut sol = WeightSolution::default();
        for (c, w) in [(0, 2.0), (1, 0.5)] {
            sol.classes.insert(c, ClassWeight { w_star: w, beta: 1.0, w_hat: w });
        }
        assert_eq!(reweighted_batch_loss(&[1.0, 2.0], &[0, 1], &sol).unwrap(), 1.5);
        assert!(reweighted_batch_loss(&[1.0], &[3], &sol).is_err());
        assert!(reweighted_batch_loss(&[], &[], &sol).is_err());
    }

    #[test]
    fn weights_serialize_keyed_by_class() {
        let stats = batch_class_stats(&[1.0, 3.0], &[0, 1]).unwrap();
        let sol = effective_weights(&stats, &MacroState::from_counts(vec![1, 1]), &ReweightConfig::default())
            .unwrap();
        let v: serde_json::Value = serde_json::from_str(&sol.to_json()).unwrap();
        assert_eq!(v["0"]["w_star"], 2.0);
        assert_eq!(v["1"]["beta"], 1.0);
    }

    #[test]
    fn balanced_stream_is_a_no_op() {
        let mut rw = InverseReweighter::new(ReweightConfig::default(), 3).unwrap();
        for _ in 0..10 {
            let labels = [0, 1, 2, 2, 1, 0];
            let losses = [0.9; 6];
            let sol = rw.step(&losses, &labels).unwrap();
            let weighted = reweighted_batch_loss(&losses, &labels, &sol).unwrap();
            assert!((weighted - 0.9).abs() < 1e-15);
        }
        assert_eq!(rw.state().counts(), &[10, 10, 10]);
    }

    proptest! {
        #[test]
        fn positivity(l in 0.0f64..10.0, lbar in 0.0f64..10.0, alpha in 0.0f64..5.0, w0 in 1e-3f64..3.0) {
            prop_assume!(l > 0.0 || alpha > 0.0);
            prop_assume!(lbar > 0.0 || alpha > 0.0);
            prop_assert!(closed_form_weight(l, lbar, alpha, w0) > 0.0);
        }

        #[test]
        fn equalization_at_zero_alpha(l in 1e-3f64..10.0, lbar in 0.0f64..10.0) {
            let w = closed_form_weight(l, lbar, 0.0, 1.0);
            prop_assert!((w * l - lbar).abs() <= 1e-14 * lbar.max(1.0));
        }

        #[test]
        fn rho_is_scale_invariant(ls in prop::collection::vec(0.0f64..10.0, 1..20), k in 1e-3f64..1e3) {
            prop_assume!(ls.iter().sum::<f64>() > 0.0);
            let scaled: Vec<f64> = ls.iter().map(|x| k * x).collect();
            let a = loss_imbalance_rho(&ls).unwrap();
            let b = loss_imbalance_rho(&scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn macro_factors_have_unit_mean(counts in prop::collection::vec(1u64..10_000, 1..30), gamma in 0.0f64..3.0) {
            let present: BTreeSet<_> = (0..counts.len()).collect();
            let b = macro_factors(&MacroState::from_counts(counts), &present, gamma).unwrap();
            let mean = b.values().sum::<f64>() / b.len() as f64;
            prop_assert!((mean - 1.0).abs() <= 1e-10);
            prop_assert!(b.values().all(|&x| x > 0.0));
        }
    }
}
