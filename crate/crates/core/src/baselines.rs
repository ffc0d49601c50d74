//! Reference reweighting losses: inverse frequency, inverse square root,
//! class-balanced (effective number), focal, influence-balanced and range.

use serde::Serialize;

use crate::error::{Error, Result};

/// Training samples per class; every class has at least one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    counts: Vec<usize>,
}

impl ClassCounts {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::domain("class counts are empty"));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!("class {c} has no samples")));
        }
        Ok(ClassCounts { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn inv_freq_weights(counts: &ClassCounts) -> Vec<f64> {
    counts.counts.iter().map(|&n| 1.0 / n as f64).collect()
}

pub fn inv_sqrt_weights(counts: &ClassCounts) -> Vec<f64> {
    counts.counts.iter().map(|&n| 1.0 / (n as f64).sqrt()).collect()
}

/// Inverse effective number `(1 − β) / (1 − β^{n_c})`.
pub fn cb_weights(counts: &ClassCounts, beta: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::domain(format!("class-balanced beta must lie in [0, 1), got {beta}")));
    }
    Ok(counts
        .counts
        .iter()
        .map(|&n| {
            // 1 − βⁿ via expm1/ln_1p keeps precision for β close to 1.
            let one_minus_pow = -((n as f64) * (-(1.0 - beta)).ln_1p()).exp_m1();
            (1.0 - beta) / one_minus_pow
        })
        .collect())
}

fn check_probs(probs: &[f64], target: usize) -> Result<()> {
    if target >= probs.len() {
        return Err(Error::domain(format!(
            "target {target} out of range for {} classes",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::domain("probabilities must lie in [0, 1]"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha_t: Option<f64>,
    /// Floor applied to `p_t` before the log; `None` rejects `p_t = 0`.
    pub p_floor: Option<f64>,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            gamma: 2.0,
            alpha_t: None,
            p_floor: None,
        }
    }
}

/// `−α_t (1 − p_t)^γ log p_t`.
pub fn focal_loss(probs: &[f64], target: usize, params: &FocalParams) -> Result<f64> {
    check_probs(probs, target)?;
    if !(params.gamma >= 0.0) {
        return Err(Error::domain("focal gamma must be non-negative"));
    }
    let alpha = params.alpha_t.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain("focal alpha_t must lie in [0, 1]"));
    }
    let mut pt = probs[target];
    if let Some(floor) = params.p_floor {
        pt = pt.max(floor);
    }
    if pt == 0.0 {
        return Err(Error::Numeric("focal loss is infinite at p_t = 0".into()));
    }
    Ok(-alpha * (1.0 - pt).powf(params.gamma) * pt.ln())
}

/// `‖p − y‖₁ ‖h‖₁`.
pub fn ib_factor(probs: &[f64], target: usize, feature: &[f64]) -> f64 {
    let l1_err: f64 = probs
        .iter()
        .enumerate()
        .map(|(k, p)| (p - if k == target { 1.0 } else { 0.0 }).abs())
        .sum();
    l1_err * feature.iter().map(|x| x.abs()).sum::<f64>()
}

/// Cross-entropy divided by `ib_factor + eps`.
pub fn ib_loss(probs: &[f64], target: usize, feature: &[f64], eps: f64) -> Result<f64> {
    check_probs(probs, target)?;
    if !(eps > 0.0) {
        return Err(Error::domain("IB epsilon must be positive"));
    }
    let pt = probs[target];
    let ce = if pt >= 1.0 { 0.0 } else { -pt.ln() };
    Ok(ce / (ib_factor(probs, target, feature) + eps))
}

/// `λ_c = s · n_c⁻¹ / Σ n_{c'}⁻¹`.
pub fn ib_class_coefficients(counts: &ClassCounts, alpha_scale: f64) -> Result<Vec<f64>> {
    if !(alpha_scale > 0.0) {
        return Err(Error::domain("IB alpha scale must be positive"));
    }
    let inv = inv_freq_weights(counts);
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|w| alpha_scale * w / total).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeParams {
    pub k: usize,
    pub margin: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RangeParams {
    fn default() -> Self {
        RangeParams {
            k: 2,
            margin: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

/// Pairwise distances are floored here before entering the harmonic mean.
pub const RANGE_DISTANCE_FLOOR: f64 = 1e-12;

/// Breakdown of the range loss for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeTerms {
    /// `Σ_c L_c^intra` over the classes with at least two samples.
    pub intra: f64,
    /// `max(M − D_center, 0)`, zero with fewer than two classes.
    pub inter: f64,
    /// `α · intra + β · inter`.
    pub total: f64,
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Group features by label in first-appearance order.
pub(crate) fn group_by_label(features: &[Vec<f64>], labels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &y) in labels.iter().enumerate().take(features.len()) {
        match groups.iter_mut().find(|(c, _)| *c == y) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((y, vec![i])),
        }
    }
    groups
}

/// Harmonic mean of the `k` largest pairwise intra-class distances (all of
/// them when fewer exist), plus a hinge on the closest pair of class centers.
pub fn range_loss(features: &[Vec<f64>], labels: &[usize], params: &RangeParams) -> Result<RangeTerms> {
    range_core(features, labels, params, false).map(|(t, _)| t)
}

/// Range loss and its gradient with respect to every feature vector. The
/// top-k selection and the closest center pair are held fixed, and floored
/// distances contribute no gradient.
pub fn range_loss_grad(
    features: &[Vec<f64>],
    labels: &[usize],
    params: &RangeParams,
) -> Result<(RangeTerms, Vec<Vec<f64>>)> {
    range_core(features, labels, params, true)
}

fn range_core(
    features: &[Vec<f64>],
    labels: &[usize],
    params: &RangeParams,
    want_grad: bool,
) -> Result<(RangeTerms, Vec<Vec<f64>>)> {
    if params.k == 0 {
        return Err(Error::domain("range loss k must be at least 1"));
    }
    if features.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features.first().map_or(0, Vec::len);
    let mut grad = if want_grad {
        vec![vec![0.0; dim]; features.len()]
    } else {
        Vec::new()
    };
    let groups = group_by_label(features, labels);

    let mut intra = 0.0;
    for (_, idx) in &groups {
        if idx.len() < 2 {
            continue;
        }
        let mut d = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                d.push((euclid(&features[i], &features[j]), i, j));
            }
        }
        d.sort_by(|x, y| y.0.total_cmp(&x.0));
        let top = &d[..params.k.min(d.len())];
        let inv_sum: f64 = top.iter().map(|t| 1.0 / t.0.max(RANGE_DISTANCE_FLOOR)).sum();
        let k = top.len() as f64;
        intra += k / inv_sum;
        if want_grad {
            // ∂H/∂d_j = k / (S² d_j²) with S = Σ 1/d.
            for &(dist, i, j) in top {
                if dist <= RANGE_DISTANCE_FLOOR {
                    continue;
                }
                let s = params.alpha * k / (inv_sum * inv_sum * dist * dist * dist);
                for t in 0..dim {
                    let g = s * (features[i][t] - features[j][t]);
                    grad[i][t] += g;
                    grad[j][t] -= g;
                }
            }
        }
    }

    let mut inter = 0.0;
    if groups.len() >= 2 {
        let centers: Vec<Vec<f64>> = groups.iter().map(|(_, idx)| center(features, idx)).collect();
        let mut closest = (f64::INFINITY, 0, 1);
        for a in 0..centers.len() {
            for b in a + 1..centers.len() {
                let d = euclid(&centers[a], &centers[b]);
                if d < closest.0 {
                    closest = (d, a, b);
                }
            }
        }
        let (min_d, a, b) = closest;
        inter = (params.margin - min_d).max(0.0);
        if want_grad && inter > 0.0 && min_d > 0.0 {
            let (ia, ib) = (&groups[a].1, &groups[b].1);
            for t in 0..dim {
                let u = -params.beta * (centers[a][t] - centers[b][t]) / min_d;
                for &i in ia {
                    grad[i][t] += u / ia.len() as f64;
                }
                for &i in ib {
                    grad[i][t] -= u / ib.len() as f64;
                }
            }
        }
    }

    Ok((
        RangeTerms {
            intra,
            inter,
            total: params.alpha * intra + params.beta * inter,
        },
        grad,
    ))
}

pub(crate) fn center(features: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let p = features[idx[0]].len();
    let mut m = vec![0.0; p];
    for &i in idx {
        m.iter_mut().zip(&features[i]).for_each(|(a, x)| *a += x);
    }
    m.iter_mut().for_each(|a| *a /= idx.len() as f64);
    m
}
