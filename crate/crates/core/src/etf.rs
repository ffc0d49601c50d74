//! Simplex equiangular tight frames and exactly collapsed fixtures.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::loss::cross_entropy_from_logits;
use crate::nc_metrics::FeatureBank;

/// `C` unit-norm class vectors in `R^p` with pairwise inner products `−1/(C−1)`.
#[derive(Clone, Debug)]
pub struct SimplexEtf {
    pub class_count: usize,
    pub feature_dim: usize,
    /// `p x C`, one class vector per column.
    pub columns: Matrix,
    pub rotation_seed: u64,
}

impl SimplexEtf {
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.columns.column(c)
    }

    /// Pairwise inner products of the class vectors (`C x C`).
    pub fn gram(&self) -> Matrix {
        etf_gram(&self.columns)
    }
}

/// Build `M = sqrt(C/(C−1)) R (I − 1 1ᵀ / C)` where `R` (`p x C`, `RᵀR = I`)
/// comes from the QR factorization of a seeded Gaussian matrix.
pub fn make_etf(class_count: usize, feature_dim: usize, seed: u64) -> Result<SimplexEtf> {
    if class_count < 2 {
        return Err(Error::domain(format!(
            "a simplex ETF needs at least 2 classes, got {class_count}"
        )));
    }
    if feature_dim < class_count {
        return Err(Error::domain(format!(
            "feature dimension {feature_dim} is smaller than class count {class_count}; \
             no orthonormal rotation exists"
        )));
    }
    let (c, p) = (class_count, feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = Matrix::from_fn(p, c, |_, _| StandardNormal.sample(&mut rng));
    let (rotation, _) = gaussian.thin_qr()?;

    let cf = c as f64;
    let centering = Matrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / cf);
    let columns = rotation.matmul(&centering)?.scale((cf / (cf - 1.0)).sqrt());
    Ok(SimplexEtf {
        class_count: c,
        feature_dim: p,
        columns,
        rotation_seed: seed,
    })
}

/// Gram matrix of the columns of a `p x C` matrix.
pub fn etf_gram(columns: &Matrix) -> Matrix {
    let t = columns.transpose();
    let c = columns.cols();
    Matrix::from_fn(c, c, |i, j| dot(t.row(i), t.row(j)))
}

/// Features sitting exactly on their class means, which form a scaled simplex
/// ETF around `global_mean`, and a zero-bias classifier aligned with the
/// centered means (`W = α M̊ᵀ`).
#[derive(Clone, Debug)]
pub struct NcFixture {
    pub etf: SimplexEtf,
    /// `C x p`.
    pub classifier: Matrix,
    /// Per class, `n_per_class` copies of the class mean.
    pub features: Vec<Vec<Vec<f64>>>,
    pub alignment_scale: f64,
    pub radius: f64,
    pub global_mean: Vec<f64>,
}

/// Construct a collapsed fixture. The component of `global_mean` lying in the
/// span of the class vectors is removed so that the zero-bias logits of every
/// class share one pattern (`α r²` on the diagonal, `−α r²/(C−1)` elsewhere).
pub fn make_nc_fixture(
    class_count: usize,
    feature_dim: usize,
    n_per_class: usize,
    alignment_scale: f64,
    radius: f64,
    global_mean: &[f64],
    seed: u64,
) -> Result<NcFixture> {
    if !(alignment_scale > 0.0) || !(radius > 0.0) {
        return Err(Error::domain("alignment scale and radius must be positive"));
    }
    if n_per_class == 0 {
        return Err(Error::domain("n_per_class must be at least 1"));
    }
    if global_mean.len() != feature_dim {
        return Err(Error::dim(format!(
            "global mean has length {}, expected {feature_dim}",
            global_mean.len()
        )));
    }
    let etf = make_etf(class_count, feature_dim, seed)?;
    let columns: Vec<Vec<f64>> = (0..class_count).map(|c| etf.column(c)).collect();

    // Class vectors sum to zero, so the span is C−1 dimensional; project the
    // global mean off an orthonormal basis of it.
    let mut mu_g = global_mean.to_vec();
    let basis = Matrix::from_columns(&columns[..class_count - 1])?.thin_qr()?.0;
    for k in 0..basis.cols() {
        let q = basis.column(k);
        let proj = dot(&q, &mu_g);
        mu_g.iter_mut().zip(&q).for_each(|(m, qi)| *m -= proj * qi);
    }

    let features = columns
        .iter()
        .map(|m| {
            let mean: Vec<f64> = mu_g.iter().zip(m).map(|(g, mi)| g + radius * mi).collect();
            vec![mean; n_per_class]
        })
        .collect();
    let classifier = Matrix::from_fn(class_count, feature_dim, |c, j| {
        alignment_scale * radius * columns[c][j]
    });
    Ok(NcFixture {
        etf,
        classifier,
        features,
        alignment_scale,
        radius,
        global_mean: mu_g,
    })
}

impl NcFixture {
    pub fn class_count(&self) -> usize {
        self.etf.class_count
    }

    /// Zero-bias logits for one feature vector.
    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        (0..self.classifier.rows())
            .map(|k| dot(self.classifier.row(k), h))
            .collect()
    }

    /// Class-wise average cross-entropy losses.
    pub fn class_losses(&self) -> Vec<f64> {
        self.features
            .iter()
            .enumerate()
            .map(|(c, feats)| {
                let total: f64 = feats
                    .iter()
                    .map(|h| cross_entropy_from_logits(&self.logits(h), c))
                    .sum();
                total / feats.len() as f64
            })
            .collect()
    }

    pub fn feature_bank(&self) -> FeatureBank {
        FeatureBank::new(self.etf.feature_dim, self.features.clone())
            .expect("fixture features are well-formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nc_metrics;
    use crate::reweighting::loss_imbalance_rho;

    fn normalized_gram(etf: &SimplexEtf) -> Matrix {
        let g = etf.gram();
        let d = g[(0, 0)];
        g.scale(1.0 / d)
    }

    #[test]
    fn three_classes_off_diagonals_are_minus_half() {
        let etf = make_etf(3, 3, 7).unwrap();
        let g = normalized_gram(&etf);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { -0.5 };
                assert!((g[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_classes_are_antipodal() {
        let etf = make_etf(2, 2, 1).unwrap();
        let g = normalized_gram(&etf);
        assert!((g[(0, 1)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_matches_centering_projector() {
        let (c, p) = (10, 64);
        let etf = make_etf(c, p, 42).unwrap();
        let g = etf.gram();
        let r2 = g[(0, 0)];
        let cf = c as f64;
        for i in 0..c {
            for j in 0..c {
                let delta = if i == j { 1.0 } else { 0.0 };
                let expected = cf / (cf - 1.0) * (delta - 1.0 / cf) * r2;
                assert!((g[(i, j)] - expected).abs() < 1e-9 * r2);
            }
        }
    }

    #[test]
    fn gram_ratio_is_minus_one_third_for_four_classes() {
        let g = make_etf(4, 9, 3).unwrap().gram();
        for i in 0..4 {
            assert!((g[(i, i)] - g[(0, 0)]).abs() < 1e-12);
            for j in 0..4 {
                if i != j {
                    assert!((g[(i, j)] / g[(i, i)] + 1.0 / 3.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perturbed_frame_breaks_equiangularity() {
        let mut etf = make_etf(4, 6, 9).unwrap();
        etf.columns[(0, 1)] += 0.3;
        let g = etf.gram();
        let r01 = g[(0, 1)] / g[(0, 0)];
        let r23 = g[(2, 3)] / g[(2, 2)];
        assert!((r01 - r23).abs() > 1e-3);
    }

    #[test]
    fn rejects_too_few_dimensions() {
        assert!(matches!(make_etf(5, 4, 0), Err(Error::Domain(_))));
        assert!(make_etf(1, 4, 0).is_err());
    }

    #[test]
    fn fixture_logit_pattern() {
        // α r² = 1 for C = 3.
        let fx = make_nc_fixture(3, 5, 2, 1.0, 1.0, &[0.3, -1.0, 2.0, 0.0, 0.5], 4).unwrap();
        for c in 0..3 {
            let z = fx.logits(&fx.features[c][0]);
            for (k, zk) in z.iter().enumerate() {
                let expected = if k == c { 1.0 } else { -0.5 };
                assert!((zk - expected).abs() < 1e-12, "class {c} logit {k}: {zk}");
            }
        }
    }

    #[test]
    fn fixture_losses_are_equal_and_rotation_invariant() {
        let mu = vec![0.1; 12];
        let a = make_nc_fixture(6, 12, 3, 2.0, 1.5, &mu, 1).unwrap().class_losses();
        let b = make_nc_fixture(6, 12, 3, 2.0, 1.5, &mu, 99).unwrap().class_losses();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - a[0]).abs() < 1e-12);
            assert!((x - y).abs() < 1e-10);
        }
        assert!(loss_imbalance_rho(&a).unwrap() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn etf_invariants(c in 2usize..=16, extra in 0usize..=20, seed in any::<u64>()) {
                let etf = make_etf(c, c + extra, seed).unwrap();
                let g = etf.gram();
                let r2 = g[(0, 0)];
                prop_assert!(r2 > 0.0);
                for i in 0..c {
                    prop_assert!((g[(i, i)] - r2).abs() <= 1e-9 * r2);
                    for j in 0..c {
                        if i != j {
                            prop_assert!((g[(i, j)] / r2 + 1.0 / (c as f64 - 1.0)).abs() <= 1e-9);
                        }
                    }
                }
            }

            #[test]
            fn fixture_end_to_end(c in 2usize..=12, extra in 0usize..=12, seed in any::<u64>(), shift in -3.0f64..3.0) {
                let p = c + extra;
                let mu: Vec<f64> = (0..p).map(|i| shift * (i as f64 + 1.0).sin()).collect();
                let fx = make_nc_fixture(c, p, 2, 1.3, 0.8, &mu, seed).unwrap();
                let losses = fx.class_losses();
                prop_assert!(loss_imbalance_rho(&losses).unwrap() <= 1e-12);
                let bank = fx.feature_bank();
                prop_assert!(nc_metrics::nc1(&bank).unwrap() <= 1e-9);
                prop_assert!(nc_metrics::nc2(&fx.classifier).unwrap() <= 1e-9);
                prop_assert!(nc_metrics::nc3(&fx.classifier, &bank).unwrap() <= 1e-9);
            }
        }
    }
}
