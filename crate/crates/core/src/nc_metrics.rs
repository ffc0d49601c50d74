//! Neural Collapse metrics on a snapshot of last-layer features and the
//! linear classifier.
//!
//! - NC1: `trace(Σ_W Σ_B⁺) / C`
//! - NC2: distance of `W Wᵀ / ‖W Wᵀ‖_F` from the normalized simplex ETF
//! - NC3: distance of `W M̊ / ‖W M̊‖_F` from the same target, `M̊` holding
//!   centered class means as columns
//! - NC4: agreement rate between the classifier decision and the nearest
//!   class mean

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::par::Execution;
use crate::reweighting::loss_imbalance_rho;

/// Per-class collections of `p`-dimensional features; class `c` is
/// `classes[c]`.
#[derive(Clone, Debug)]
pub struct FeatureBank {
    feature_dim: usize,
    classes: Vec<Vec<Vec<f64>>>,
}

impl FeatureBank {
    pub fn new(feature_dim: usize, classes: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Data("feature bank has no classes".into()));
        }
        for (c, list) in classes.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Data(format!("class {c} has no features")));
            }
            if let Some(h) = list.iter().find(|h| h.len() != feature_dim) {
                return Err(Error::dim(format!(
                    "class {c} holds a feature of length {}, expected {feature_dim}",
                    h.len()
                )));
            }
        }
        Ok(FeatureBank {
            feature_dim,
            classes,
        })
    }

    /// Group labeled features by class id in `0..class_count`.
    pub fn from_labeled(
        features: Vec<Vec<f64>>,
        labels: &[usize],
        class_count: usize,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} features but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let feature_dim = features.first().map_or(0, Vec::len);
        let mut classes = vec![Vec::new(); class_count];
        for (h, &y) in features.into_iter().zip(labels) {
            if y >= class_count {
                return Err(Error::Data(format!(
                    "label {y} out of range for {class_count} classes"
                )));
            }
            classes[y].push(h);
        }
        Self::new(feature_dim, classes)
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, c: usize) -> &[Vec<f64>] {
        &self.classes[c]
    }

    pub fn sample_count(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    /// `(class, feature)` pairs in class order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(c, list)| list.iter().map(move |h| (c, h.as_slice())))
    }
}

#[derive(Clone, Debug)]
pub struct ClassMeans {
    pub means: Vec<Vec<f64>>,
    /// Unweighted mean of the class means.
    pub global: Vec<f64>,
}

impl ClassMeans {
    /// Centered class means `μ_c − μ_G` as the columns of a `p x C` matrix.
    pub fn centered_matrix(&self) -> Matrix {
        let p = self.global.len();
        Matrix::from_fn(p, self.means.len(), |i, c| self.means[c][i] - self.global[i])
    }
}

pub fn class_means(bank: &FeatureBank) -> ClassMeans {
    let p = bank.feature_dim;
    let means: Vec<Vec<f64>> = bank
        .classes
        .iter()
        .map(|list| {
            let mut m = vec![0.0; p];
            for h in list {
                m.iter_mut().zip(h).for_each(|(a, x)| *a += x);
            }
            let n = list.len() as f64;
            m.iter_mut().for_each(|a| *a /= n);
            m
        })
        .collect();
    let cf = means.len() as f64;
    let mut global = vec![0.0; p];
    for m in &means {
        global.iter_mut().zip(m).for_each(|(g, x)| *g += x);
    }
    global.iter_mut().for_each(|g| *g /= cf);
    ClassMeans { means, global }
}

pub fn covariances(bank: &FeatureBank) -> (Matrix, Matrix) {
    covariances_with(bank, Execution::default())
}

/// Within-class covariance averaged over all samples and between-class
/// covariance `(1/C) Σ μ̂_c μ̂_cᵀ`. Per-class outer-product sums may run in
/// parallel; they are reduced in class order.
pub fn covariances_with(bank: &FeatureBank, exec: Execution) -> (Matrix, Matrix) {
    let p = bank.feature_dim;
    let means = class_means(bank);
    let partials = exec.map_range(bank.class_count(), |c| {
        let mut acc = Matrix::zeros(p, p);
        let mu = &means.means[c];
        let mut diff = vec![0.0; p];
        for h in &bank.classes[c] {
            diff.iter_mut()
                .zip(h.iter().zip(mu))
                .for_each(|(d, (x, m))| *d = x - m);
            add_outer(&mut acc, &diff, 1.0);
        }
        acc
    });
    let mut sigma_w = Matrix::zeros(p, p);
    for part in &partials {
        sigma_w
            .data_mut()
            .iter_mut()
            .zip(part.data())
            .for_each(|(a, b)| *a += b);
    }
    let n = bank.sample_count() as f64;
    let sigma_w = sigma_w.scale(1.0 / n);

    let mut sigma_b = Matrix::zeros(p, p);
    let c = bank.class_count() as f64;
    for mu in &means.means {
        let centered: Vec<f64> = mu.iter().zip(&means.global).map(|(a, g)| a - g).collect();
        add_outer(&mut sigma_b, &centered, 1.0 / c);
    }
    (sigma_w, sigma_b)
}

fn add_outer(acc: &mut Matrix, v: &[f64], scale: f64) {
    let p = v.len();
    for i in 0..p {
        let vi = v[i] * scale;
        if vi == 0.0 {
            continue;
        }
        for (a, vj) in acc.row_mut(i).iter_mut().zip(v) {
            *a += vi * vj;
        }
    }
}

pub fn nc1(bank: &FeatureBank) -> Result<f64> {
    nc1_with(bank, Execution::default())
}

pub fn nc1_with(bank: &FeatureBank, exec: Execution) -> Result<f64> {
    let (sigma_w, sigma_b) = covariances_with(bank, exec);
    let pinv = sigma_b.pinv(sigma_b.default_rank_tol())?;
    Ok((sigma_w.matmul(&pinv)?.trace()? / bank.class_count() as f64).max(0.0))
}

/// `(1/√(C−1)) (I_C − (1/C) 1 1ᵀ)`, unit Frobenius norm.
pub fn normalized_etf_target(class_count: usize) -> Matrix {
    let c = class_count as f64;
    let s = 1.0 / (c - 1.0).sqrt();
    Matrix::from_fn(class_count, class_count, |i, j| {
        s * (if i == j { 1.0 } else { 0.0 } - 1.0 / c)
    })
}

fn distance_to_etf(m: &Matrix, what: &str) -> Result<f64> {
    let c = m.rows();
    if c < 2 {
        return Err(Error::domain("ETF distance needs at least 2 classes"));
    }
    let norm = m.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::Numeric(format!("{what} is the zero matrix")));
    }
    Ok(m.scale(1.0 / norm)
        .sub(&normalized_etf_target(c))?
        .frobenius_norm())
}

pub fn nc2(classifier: &Matrix) -> Result<f64> {
    distance_to_etf(&classifier.matmul(&classifier.transpose())?, "W Wᵀ")
}

pub fn nc3(classifier: &Matrix, bank: &FeatureBank) -> Result<f64> {
    if classifier.rows() != bank.class_count() || classifier.cols() != bank.feature_dim() {
        return Err(Error::dim(format!(
            "classifier is {}x{} but the bank has {} classes of dimension {}",
            classifier.rows(),
            classifier.cols(),
            bank.class_count(),
            bank.feature_dim()
        )));
    }
    let centered = class_means(bank).centered_matrix();
    distance_to_etf(&classifier.matmul(&centered)?, "W M̊")
}

fn first_argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Fraction of samples where `argmax_c ⟨w_c, h⟩ + b_c` equals the nearest
/// class mean; both sides break ties toward the lowest class id.
pub fn nc4_agreement(classifier: &Matrix, bias: &[f64], bank: &FeatureBank) -> Result<f64> {
    let c = bank.class_count();
    if classifier.rows() != c || classifier.cols() != bank.feature_dim() || bias.len() != c {
        return Err(Error::dim(format!(
            "classifier {}x{} with bias of length {} does not match {c} classes of dimension {}",
            classifier.rows(),
            classifier.cols(),
            bias.len(),
            bank.feature_dim()
        )));
    }
    let means = class_means(bank).means;
    let mut agree = 0usize;
    for (_, h) in bank.iter() {
        let decision = first_argmax((0..c).map(|k| dot(classifier.row(k), h) + bias[k]));
        let nearest = first_argmax(means.iter().map(|m| {
            -m.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }));
        agree += usize::from(decision == nearest);
    }
    Ok(agree as f64 / bank.sample_count() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NcReport {
    pub epoch: usize,
    pub nc1: f64,
    pub nc2: f64,
    pub nc3: f64,
    pub nc4_agreement: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

/// All metrics for one snapshot. `class_losses` are the per-class average
/// losses over the full set; `rho` is omitted without them.
pub fn nc_report(
    classifier: &Matrix,
    bias: &[f64],
    bank: &FeatureBank,
    class_losses: Option<&[f64]>,
    epoch: usize,
    exec: Execution,
) -> Result<NcReport> {
    let report = NcReport {
        epoch,
        nc1: nc1_with(bank, exec)?,
        nc2: nc2(classifier)?,
        nc3: nc3(classifier, bank)?,
        nc4_agreement: nc4_agreement(classifier, bias, bank)?,
        rho: class_losses.map(loss_imbalance_rho).transpose()?,
    };
    let finite = [report.nc1, report.nc2, report.nc3, report.nc4_agreement]
        .iter()
        .chain(report.rho.iter())
        .all(|x| x.is_finite());
    if !finite {
        return Err(Error::Numeric(format!("non-finite NC metric at epoch {epoch}")));
    }
    Ok(report)
}
