//! Small dense real matrix kernel: products, norms, traces, a one-sided
//! Jacobi SVD and the Moore-Penrose pseudo-inverse built on it.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const MAX_JACOBI_SWEEPS: usize = 100;

/// Row-major `rows x cols` matrix of finite `f64` entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Serialized as a list of rows.
impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq((0..self.rows).map(|i| self.row(i)))
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Build a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::dim("columns of unequal length"));
        }
        let m = Self::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        Self::new(m.rows, m.cols, m.data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by a vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ v` without materializing the transpose.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::dim(format!(
                "cannot multiply ({}x{})ᵀ by a vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "shape {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> Result<f64> {
        if !self.is_square() {
            return Err(Error::dim(format!(
                "trace of non-square {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok((0..self.rows).map(|i| self[(i, i)]).sum())
    }

    /// Rank cutoff `max(rows, cols) * machine epsilon`, relative to the largest singular value.
    pub fn default_rank_tol(&self) -> f64 {
        self.rows.max(self.cols) as f64 * f64::EPSILON
    }

    /// Thin singular value decomposition `A = U diag(s) Vᵀ` with
    /// `k = min(rows, cols)` singular values sorted in descending order.
    pub fn svd(&self) -> Result<Svd> {
        if self.rows >= self.cols {
            jacobi_svd(self)
        } else {
            let t = jacobi_svd(&self.transpose())?;
            Ok(Svd {
                u: t.v,
                singular_values: t.singular_values,
                v: t.u,
            })
        }
    }

    /// Moore-Penrose pseudo-inverse. Singular values `σ <= rank_tol * σ_max`
    /// are treated as zero.
    pub fn pinv(&self, rank_tol: f64) -> Result<Matrix> {
        if !(rank_tol >= 0.0) {
            return Err(Error::domain("rank tolerance must be non-negative"));
        }
        let svd = self.svd()?;
        let sigma_max = svd.singular_values.first().copied().unwrap_or(0.0);
        let cutoff = rank_tol * sigma_max;
        let mut out = Matrix::zeros(self.cols, self.rows);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= cutoff || s == 0.0 {
                continue;
            }
            let inv = 1.0 / s;
            for i in 0..self.cols {
                let vik = svd.v[(i, k)] * inv;
                if vik == 0.0 {
                    continue;
                }
                let row = out.row_mut(i);
                for (j, o) in row.iter_mut().enumerate() {
                    *o += vik * svd.u[(j, k)];
                }
            }
        }
        Ok(out)
    }

    /// Thin QR by twice-iterated modified Gram-Schmidt. Requires full column
    /// rank; the diagonal of `R` is positive.
    pub fn thin_qr(&self) -> Result<(Matrix, Matrix)> {
        let (m, n) = self.shape();
        if m < n {
            return Err(Error::dim(format!("thin QR needs rows >= cols, got {m}x{n}")));
        }
        let mut q: Vec<Vec<f64>> = (0..n).map(|j| self.column(j)).collect();
        let mut r = Matrix::zeros(n, n);
        for j in 0..n {
            for _pass in 0..2 {
                for i in 0..j {
                    let proj = dot(&q[i], &q[j]);
                    r[(i, j)] += proj;
                    let (head, tail) = q.split_at_mut(j);
                    axpy(-proj, &head[i], &mut tail[0]);
                }
            }
            let norm = dot(&q[j], &q[j]).sqrt();
            if norm <= f64::EPSILON * self.frobenius_norm() {
                return Err(Error::Numeric("thin QR: rank-deficient input".into()));
            }
            r[(j, j)] = norm;
            q[j].iter_mut().for_each(|x| *x /= norm);
        }
        Ok((Matrix::from_columns(&q)?, r))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Thin SVD factors. `u` is `rows x k`, `v` is `cols x k`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

// One-sided (Hestenes) Jacobi on the columns of a tall matrix.
fn jacobi_svd(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let tol = f64::EPSILON;
    let mut converged = n < 2;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge within {MAX_JACOBI_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<(usize, f64)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dot(c, c).sqrt()))
        .collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (k, &(j, s)) in order.iter().enumerate() {
        singular_values.push(s);
        for i in 0..m {
            u[(i, k)] = if s > 0.0 { cols[j][i] / s } else { 0.0 };
        }
        for i in 0..n {
            vm[(i, k)] = v[j][i];
        }
    }
    Ok(Svd {
        u,
        singular_values,
        v: vm,
    })
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(j);
    let (ci, cj) = (&mut head[i], &mut tail[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    // Gauss-Jordan with partial pivoting; independent of the SVD path.
    fn gauss_inverse(a: &Matrix) -> Matrix {
        let n = a.rows();
        let mut aug = Matrix::from_fn(n, 2 * n, |i, j| {
            if j < n {
                a[(i, j)]
            } else if j - n == i {
                1.0
            } else {
                0.0
            }
        });
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| aug[(x, col)].abs().total_cmp(&aug[(y, col)].abs()))
                .unwrap();
            for j in 0..2 * n {
                let t = aug[(col, j)];
                aug[(col, j)] = aug[(piv, j)];
                aug[(piv, j)] = t;
            }
            let p = aug[(col, col)];
            for j in 0..2 * n {
                aug[(col, j)] /= p;
            }
            for i in 0..n {
                if i != col {
                    let f = aug[(i, col)];
                    for j in 0..2 * n {
                        aug[(i, j)] -= f * aug[(col, j)];
                    }
                }
            }
        }
        Matrix::from_fn(n, n, |i, j| aug[(i, j + n)])
    }

    #[test]
    fn construction_checks() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
        let ones = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let p = a.matmul(&ones).unwrap();
        assert_eq!(p.data(), &[3.0, 7.0]);
        assert_eq!(
            Matrix::zeros(2, 2).matmul(&a).unwrap(),
            Matrix::zeros(2, 2)
        );
        assert!(matches!(a.matmul(&Matrix::zeros(3, 1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn norm_and_trace_examples() {
        assert_eq!(Matrix::zeros(3, 2).frobenius_norm(), 0.0);
        assert_eq!(Matrix::new(1, 2, vec![3.0, 4.0]).unwrap().frobenius_norm(), 5.0);
        assert!((Matrix::identity(7).frobenius_norm() - 7f64.sqrt()).abs() < 1e-15);
        assert_eq!(Matrix::identity(3).trace().unwrap(), 3.0);
        let s = Matrix::from_rows(&[vec![2.0, 9.0], vec![9.0, 5.0]]).unwrap();
        assert_eq!(s.trace().unwrap(), 7.0);
        assert_eq!(Matrix::zeros(4, 4).trace().unwrap(), 0.0);
        assert!(Matrix::zeros(2, 3).trace().is_err());
    }

    #[test]
    fn pinv_of_invertible_matches_gauss_jordan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 12] {
            let a = random(n, n, &mut rng).add(&Matrix::identity(n).scale(2.0)).unwrap();
            let p = a.pinv(a.default_rank_tol()).unwrap();
            let g = gauss_inverse(&a);
            let diff = p.sub(&g).unwrap().data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(diff < 1e-10, "n={n} diff={diff}");
        }
    }

    #[test]
    fn pinv_of_zero_is_transposed_zero() {
        let z = Matrix::zeros(3, 5);
        assert_eq!(z.pinv(z.default_rank_tol()).unwrap(), Matrix::zeros(5, 3));
    }

    #[test]
    fn pinv_rank_one_closed_form() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0];
        let a = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        let p = a.pinv(a.default_rank_tol()).unwrap();
        let denom = dot(&u, &u) * dot(&v, &v);
        let expected = Matrix::from_fn(2, 3, |i, j| v[i] * u[j] / denom);
        assert!(rel_err(&p, &expected) < 1e-12);
    }

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (r, c) in [(7, 3), (3, 7), (6, 6)] {
            let a = random(r, c, &mut rng);
            let svd = a.svd().unwrap();
            let k = svd.singular_values.len();
            let s = Matrix::from_fn(k, k, |i, j| if i == j { svd.singular_values[i] } else { 0.0 });
            let back = svd.u.matmul(&s).unwrap().matmul(&svd.v.transpose()).unwrap();
            assert!(rel_err(&back, &a) < 1e-12);
            assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn thin_qr_is_orthonormal_with_positive_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(9, 4, &mut rng);
        let (q, r) = a.thin_qr().unwrap();
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(rel_err(&qtq, &Matrix::identity(4)) < 1e-14);
        assert!((0..4).all(|i| r[(i, i)] > 0.0));
        assert!(rel_err(&q.matmul(&r).unwrap(), &a) < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn penrose_errors(a: &Matrix) -> [f64; 4] {
            let p = a.pinv(a.default_rank_tol()).unwrap();
            let ap = a.matmul(&p).unwrap();
            let pa = p.matmul(a).unwrap();
            [
                rel_err(&ap.matmul(a).unwrap(), a),
                rel_err(&pa.matmul(&p).unwrap(), &p),
                rel_err(&ap.transpose(), &ap),
                rel_err(&pa.transpose(), &pa),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn penrose_conditions_hold(rows in 1usize..=64, cols in 1usize..=64, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random(rows, cols, &mut rng);
                for e in penrose_errors(&a) {
                    prop_assert!(e < 1e-8, "penrose error {e}");
                }
            }

            #[test]
            fn penrose_conditions_hold_rank_deficient(n in 2usize..=24, rank in 1usize..=4, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let rank = rank.min(n - 1);
                let a = random(n, rank, &mut rng).matmul(&random(rank, n, &mut rng)).unwrap();
                for e in penrose_errors(&a) {
                    prop_assert!(e < 1e-8, "penrose error {e}");
                }
            }

            #[test]
            fn frobenius_squared_is_trace_of_gram(rows in 1usize..=20, cols in 1usize..=20, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random(rows, cols, &mut rng);
                let f2 = a.frobenius_norm().powi(2);
                let tr = a.transpose().matmul(&a).unwrap().trace().unwrap();
                prop_assert!((f2 - tr).abs() <= 1e-10 * tr.abs().max(1e-300));
            }

            #[test]
            fn matmul_is_associative(n in 1usize..=12, m in 1usize..=12, k in 1usize..=12, l in 1usize..=12, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random(n, m, &mut rng);
                let b = random(m, k, &mut rng);
                let c = random(k, l, &mut rng);
                let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
                let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
                prop_assert!(rel_err(&left, &right) <= 1e-9);
            }
        }
    }
}
