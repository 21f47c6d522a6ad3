//! Minimal dense linear algebra for the posterior machinery.
//!
//! Only what the Bayesian head needs: square symmetric matrices, Cholesky
//! factorization with an escalating jitter ladder, triangular solves, and
//! multivariate normal sampling parameterized by a precision factor. The
//! dimension stays small (a few dozen features), so everything is dense and
//! unblocked.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::RngStream;

/// Jitter levels tried in order when a factorization hits a non-positive
/// pivot. The prior precision usually keeps the posterior matrix well away
/// from singularity; the ladder covers near-rank-deficient feature Grams.
const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Relative tolerance for the symmetry precondition.
const SYMMETRY_RTOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric within relative tolerance {SYMMETRY_RTOL:e}")]
    NotSymmetric,
    #[error("matrix is not positive definite (all jitter levels up to 1e-6 failed)")]
    NotPositiveDefinite,
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    /// `s * I`.
    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, s);
        }
        m
    }

    /// Build from nested rows; panics if the rows are not square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), dim, "matrix rows must form a square");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    /// `self += scale * v v^T`.
    pub fn add_scaled_outer(&mut self, v: &[f64], scale: f64) {
        assert_eq!(v.len(), self.dim, "outer-product dimension mismatch");
        for i in 0..self.dim {
            let si = scale * v[i];
            for j in 0..self.dim {
                self.data[i * self.dim + j] += si * v[j];
            }
        }
    }

    /// `self + other`, panicking on dimension mismatch.
    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.dim, other.dim);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { dim: self.dim, data }
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self, rtol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                if (self.get(i, j) - self.get(j, i)).abs() > rtol * scale {
                    return false;
                }
            }
        }
        true
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = A + jitter I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Matrix,
    jitter: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    /// The jitter that was added to the diagonal to make the factorization
    /// succeed (0 for well-conditioned inputs).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// `L L^T`, for round-trip checks.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.l.dim();
        let mut a = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..=i.min(j) {
                    s += self.l.get(i, k) * self.l.get(j, k);
                }
                a.set(i, j, s);
            }
        }
        a
    }

    /// Solve `(L L^T) x = b` by forward then backward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let y = self.solve_lower(b);
        self.solve_lower_transpose(&y)
    }

    /// Solve `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        assert_eq!(b.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l.get(i, k) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        y
    }

    /// Solve `L^T x = b`.
    pub fn solve_lower_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        assert_eq!(b.len(), n);
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l.get(k, i) * x[k];
            }
            x[i] = s / self.l.get(i, i);
        }
        x
    }

    /// Inverse of the factored matrix, column by column via [`Self::solve`].
    pub fn inverse(&self) -> Matrix {
        let n = self.l.dim();
        let mut inv = Matrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }
}

/// Cholesky factorization with the jitter ladder.
///
/// Requires `a` symmetric within `1e-10` relative tolerance. Tries
/// `A + jitter I` for jitter in `{0, 1e-10, 1e-8, 1e-6}` and returns the
/// first factor that succeeds with strictly positive pivots.
pub fn cholesky(a: &Matrix) -> Result<CholeskyFactor, LinalgError> {
    if !a.is_symmetric(SYMMETRY_RTOL) {
        return Err(LinalgError::NotSymmetric);
    }
    for &jitter in &JITTER_LADDER {
        if let Some(l) = cholesky_raw(a, jitter) {
            return Ok(CholeskyFactor { l, jitter });
        }
    }
    Err(LinalgError::NotPositiveDefinite)
}

fn cholesky_raw(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.dim();
    let mut l = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Draw from `N(mean, P^{-1})` where `precision_factor` factors `P = L L^T`.
///
/// Solves `L^T t = z` with `z` i.i.d. standard normal, so that
/// `cov(t) = L^{-T} L^{-1} = P^{-1}`. Deterministic given the stream.
pub fn sample_mvn(mean: &[f64], precision_factor: &CholeskyFactor, rng: &mut RngStream) -> Vec<f64> {
    let n = precision_factor.dim();
    assert_eq!(mean.len(), n, "mean dimension must match the factor");
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let t = precision_factor.solve_lower_transpose(&z);
    mean.iter().zip(&t).map(|(m, t)| m + t).collect()
}

/// Dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot-product dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn cholesky_identity() {
        let f = cholesky(&Matrix::identity(2)).unwrap();
        assert_eq!(f.jitter(), 0.0);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(f.lower().get(i, j), want);
            }
        }
    }

    #[test]
    fn cholesky_two_by_two() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let f = cholesky(&a).unwrap();
        assert!((f.lower().get(0, 0) - 2.0).abs() < 1e-12);
        assert!((f.lower().get(1, 0) - 1.0).abs() < 1e-12);
        assert!((f.lower().get(1, 1) - 2.0_f64.sqrt()).abs() < 1e-12);
        // Multiply back.
        let r = f.reconstruct();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.get(i, j) - a.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_indefinite_fails() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(cholesky(&a).unwrap_err(), LinalgError::NotPositiveDefinite);
    }

    #[test]
    fn cholesky_asymmetric_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]);
        assert_eq!(cholesky(&a).unwrap_err(), LinalgError::NotSymmetric);
    }

    #[test]
    fn cholesky_roundtrip_random_spd() {
        // A = B B^T + I is SPD; relative Frobenius error of the round trip
        // must stay at the 1e-10 contract.
        let mut rng = stream(11);
        for dim in [1usize, 2, 3, 5, 8, 16] {
            let mut b = Matrix::zeros(dim);
            for i in 0..dim {
                for j in 0..dim {
                    b.set(i, j, rng.sample::<f64, _>(StandardNormal));
                }
            }
            let mut a = Matrix::identity(dim);
            for i in 0..dim {
                for j in 0..dim {
                    let mut s = a.get(i, j);
                    for k in 0..dim {
                        s += b.get(i, k) * b.get(j, k);
                    }
                    a.set(i, j, s);
                }
            }
            let f = cholesky(&a).unwrap();
            let r = f.reconstruct();
            let mut diff = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    diff += (r.get(i, j) - a.get(i, j)).powi(2);
                }
            }
            let rel = diff.sqrt() / a.frobenius_norm();
            assert!(rel <= 1e-10, "round-trip error {rel} at dim {dim}");
        }
    }

    #[test]
    fn solve_identity() {
        let f = cholesky(&Matrix::identity(2)).unwrap();
        assert_eq!(f.solve(&[3.0, 5.0]), vec![3.0, 5.0]);
    }

    #[test]
    fn solve_two_by_two() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let f = cholesky(&a).unwrap();
        let x = f.solve(&[2.0, 1.0]);
        assert!((x[0] - 0.5).abs() < 1e-12);
        assert!(x[1].abs() < 1e-12);
        // Residual check per contract.
        let ax = a.matvec(&x);
        let res = ((ax[0] - 2.0).powi(2) + (ax[1] - 1.0).powi(2)).sqrt() / 5.0_f64.sqrt();
        assert!(res <= 1e-8);
    }

    #[test]
    fn solve_diagonal() {
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        let f = cholesky(&a).unwrap();
        assert_eq!(f.solve(&[2.0, 4.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn sample_mvn_deterministic() {
        let f = cholesky(&Matrix::identity(3)).unwrap();
        let a = sample_mvn(&[0.0; 3], &f, &mut stream(5));
        let b = sample_mvn(&[0.0; 3], &f, &mut stream(5));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mvn_identity_covariance() {
        // precision = I, mean = 0: empirical covariance of 1e5 draws within
        // 0.05 of I entrywise.
        let f = cholesky(&Matrix::identity(2)).unwrap();
        let mut rng = stream(17);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut cross = [[0.0; 2]; 2];
        for _ in 0..n {
            let x = sample_mvn(&[0.0, 0.0], &f, &mut rng);
            for i in 0..2 {
                sum[i] += x[i];
                for j in 0..2 {
                    cross[i][j] += x[i] * x[j];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let cov = cross[i][j] / n as f64 - sum[i] * sum[j] / (n as f64).powi(2);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov - want).abs() < 0.05, "cov[{i}][{j}] = {cov}");
            }
        }
    }

    #[test]
    fn sample_mvn_tight_precision_mean() {
        // precision = diag(100, 100): sd per coordinate is 0.1, so the mean
        // of 1e5 draws lands within 0.01 of the requested mean.
        let a = Matrix::scaled_identity(2, 100.0);
        let f = cholesky(&a).unwrap();
        let mut rng = stream(23);
        let n = 100_000;
        let mut sum = [0.0; 2];
        for _ in 0..n {
            let x = sample_mvn(&[1.0, 2.0], &f, &mut rng);
            sum[0] += x[0];
            sum[1] += x[1];
        }
        assert!((sum[0] / n as f64 - 1.0).abs() < 0.01);
        assert!((sum[1] / n as f64 - 2.0).abs() < 0.01);
    }

    #[test]
    fn sample_mvn_covariance_law_general_precision() {
        // For SPD P, the empirical covariance converges to P^{-1};
        // entrywise tolerance 50 * max|P^{-1}| / sqrt(n).
        let p = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 2.0]]);
        let f = cholesky(&p).unwrap();
        let pinv = f.inverse();
        let mut rng = stream(29);
        let n = 100_000usize;
        let mut sum = [0.0; 2];
        let mut cross = [[0.0; 2]; 2];
        for _ in 0..n {
            let x = sample_mvn(&[0.0, 0.0], &f, &mut rng);
            for i in 0..2 {
                sum[i] += x[i];
                for j in 0..2 {
                    cross[i][j] += x[i] * x[j];
                }
            }
        }
        let tol = 50.0 * pinv.max_abs() / (n as f64).sqrt();
        for i in 0..2 {
            for j in 0..2 {
                let cov = cross[i][j] / n as f64 - sum[i] * sum[j] / (n as f64).powi(2);
                assert!((cov - pinv.get(i, j)).abs() < tol, "cov[{i}][{j}] = {cov}");
            }
        }
    }
}
