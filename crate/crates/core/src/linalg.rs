//! Dense real linear algebra.
//!
//! A small row-major matrix type plus the factorizations the detectors need:
//! Cholesky solves for the zero-gradient receivers and a cyclic Jacobi
//! eigensolver that backs the positive-semidefinite projection inside the
//! semidefinite-relaxation solver. Problem sizes here are tiny (tens of rows),
//! so everything is written for clarity and cache-friendly inner loops rather
//! than for BLAS-scale tuning. The batched network code is the one hot spot;
//! its matrix products run through [`Mat::matmul`], [`Mat::matmul_nt`] and
//! [`Mat::matmul_tn`], whose inner loops are contiguous slice walks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, F::one());
        }
        m
    }

    /// Diagonal matrix from the given entries.
    pub fn from_diag(diag: &[F]) -> Self {
        let mut m = Mat::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds a matrix by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    /// Builds a matrix from nested row slices (test convenience).
    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Mat { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> F {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: F) {
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copies column `j` into a fresh vector.
    pub fn col(&self, j: usize) -> Vec<F> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    /// Writes `v` into column `j`.
    pub fn set_col(&mut self, j: usize, v: &[F]) {
        assert_eq!(v.len(), self.rows, "column length mismatch");
        for (i, &x) in v.iter().enumerate() {
            self.set(i, j, x);
        }
    }

    /// Matrix-vector product `A x`.
    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Transposed matrix-vector product `A^T x`.
    pub fn tr_matvec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.rows, "tr_matvec dimension mismatch");
        let mut y = vec![F::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (yj, &aij) in y.iter_mut().zip(self.row(i)) {
                *yj += xi * aij;
            }
        }
        y
    }

    /// Matrix product `A B`.
    pub fn matmul(&self, b: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, b.rows, "matmul dimension mismatch");
        let mut c = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let crow = c.row_mut(i);
            for (k, &aik) in arow.iter().enumerate() {
                let brow = b.row(k);
                for (cj, &bkj) in crow.iter_mut().zip(brow) {
                    *cj += aik * bkj;
                }
            }
        }
        c
    }

    /// Matrix product `A B^T` (both operands walked row-contiguously).
    pub fn matmul_nt(&self, b: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, b.cols, "matmul_nt dimension mismatch");
        let mut c = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            let crow = c.row_mut(i);
            for (j, cij) in crow.iter_mut().enumerate() {
                *cij = dot(arow, b.row(j));
            }
        }
        c
    }

    /// Matrix product `A^T B`.
    pub fn matmul_tn(&self, b: &Mat<F>) -> Mat<F> {
        assert_eq!(self.rows, b.rows, "matmul_tn dimension mismatch");
        let mut c = Mat::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = b.row(k);
            for (i, &aki) in arow.iter().enumerate() {
                let crow = c.row_mut(i);
                for (cij, &bkj) in crow.iter_mut().zip(brow) {
                    *cij += aki * bkj;
                }
            }
        }
        c
    }

    /// Gram matrix `A^T A` (symmetric by construction).
    pub fn gram(&self) -> Mat<F> {
        let mut g = Mat::zeros(self.cols, self.cols);
        for k in 0..self.rows {
            let row = self.row(k);
            for i in 0..self.cols {
                let aki = row[i];
                for j in i..self.cols {
                    g.add_at(i, j, aki * row[j]);
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                let v = g.at(j, i);
                g.set(i, j, v);
            }
        }
        g
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Mat<F> {
        Mat::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    /// Copies `block` into `self` starting at `(r0, c0)`, scaled by `scale`.
    pub fn insert_block(&mut self, r0: usize, c0: usize, block: &Mat<F>, scale: F) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols, "block out of range");
        for i in 0..block.rows {
            let src = block.row(i);
            let dst = &mut self.row_mut(r0 + i)[c0..c0 + block.cols];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = scale * s;
            }
        }
    }

    /// `self += s * I`.
    pub fn add_scaled_identity(&mut self, s: F) {
        assert_eq!(self.rows, self.cols, "add_scaled_identity needs a square matrix");
        for i in 0..self.rows {
            self.add_at(i, i, s);
        }
    }

    /// `self += s * other` (elementwise).
    pub fn add_scaled(&mut self, other: &Mat<F>, s: F) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Scales every entry in place.
    pub fn scale(&mut self, s: F) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    /// Adds `v[i]` to every entry of row `i` (bias broadcast over columns).
    pub fn add_row_broadcast(&mut self, v: &[F]) {
        assert_eq!(v.len(), self.rows, "broadcast length mismatch");
        for (i, &b) in v.iter().enumerate() {
            for a in self.row_mut(i) {
                *a += b;
            }
        }
    }

    /// Sum of each row (used for bias gradients of batched layers).
    pub fn row_sums(&self) -> Vec<F> {
        (0..self.rows).map(|i| self.row(i).iter().copied().sum()).collect()
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum::<F>().sqrt()
    }

    /// Largest absolute deviation from symmetry, `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> F {
        assert_eq!(self.rows, self.cols, "asymmetry needs a square matrix");
        let mut worst = F::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let d = (self.at(i, j) - self.at(j, i)).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// Replaces the matrix by its symmetric part `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols, "symmetrize needs a square matrix");
        let half = F::from_f64(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let m = half * (self.at(i, j) + self.at(j, i));
                self.set(i, j, m);
                self.set(j, i, m);
            }
        }
    }
}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Squared Euclidean norm.
#[inline]
pub fn norm_sq<F: Scalar>(a: &[F]) -> F {
    dot(a, a)
}

/// Elementwise difference `a - b`.
pub fn vec_sub<F: Scalar>(a: &[F], b: &[F]) -> Vec<F> {
    assert_eq!(a.len(), b.len(), "vec_sub length mismatch");
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// `y += s * x`.
pub fn axpy<F: Scalar>(y: &mut [F], x: &[F], s: F) {
    assert_eq!(y.len(), x.len(), "axpy length mismatch");
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Pivot threshold below which a Cholesky factorization is rejected.
const CHOLESKY_PIVOT_MIN: f64 = 1e-12;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug)]
pub struct CholeskyFactor<F> {
    l: Mat<F>,
}

/// Factors a symmetric positive-definite matrix as `A = L L^T`.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot falls at or below
/// `1e-12`; callers that expect numerically semidefinite inputs should use
/// [`solve_spd_jittered`].
pub fn cholesky<F: Scalar>(a: &Mat<F>) -> Result<CholeskyFactor<F>> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let pivot_min = F::from_f64(CHOLESKY_PIVOT_MIN);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a.at(j, j);
        for k in 0..j {
            let ljk = l.at(j, k);
            d -= ljk * ljk;
        }
        if d <= pivot_min {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d.as_f64() });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in (j + 1)..n {
            let mut s = a.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(CholeskyFactor { l })
}

impl<F: Scalar> CholeskyFactor<F> {
    /// Solves `A x = b` by forward and back substitution.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.l.rows();
        assert_eq!(b.len(), n, "cholesky solve length mismatch");
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l.at(i, k) * y[k];
            }
            y[i] = s / self.l.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l.at(k, i) * y[k];
            }
            y[i] = s / self.l.at(i, i);
        }
        y
    }

    /// Full inverse, column by column (intended for small matrices).
    pub fn inverse(&self) -> Mat<F> {
        let n = self.l.rows();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![F::zero(); n];
        for j in 0..n {
            e[j] = F::one();
            let col = self.solve(&e);
            inv.set_col(j, &col);
            e[j] = F::zero();
        }
        inv
    }
}

/// Solves the symmetric positive-definite system `A x = b`.
pub fn solve_spd<F: Scalar>(a: &Mat<F>, b: &[F]) -> Result<Vec<F>> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch(format!(
            "solve_spd: matrix is {}x{} but rhs has length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    Ok(cholesky(a)?.solve(b))
}

/// Diagonal jitter added on the single retry of [`solve_spd_jittered`].
const SPD_JITTER: f64 = 1e-10;

/// Like [`solve_spd`], but retries once with `A + 1e-10 I` when the
/// factorization fails. Gram matrices assembled from random channels can be
/// numerically semidefinite; the jitter makes those solvable without
/// meaningfully perturbing well-conditioned systems.
pub fn solve_spd_jittered<F: Scalar>(a: &Mat<F>, b: &[F]) -> Result<Vec<F>> {
    match solve_spd(a, b) {
        Ok(x) => Ok(x),
        Err(Error::NotPositiveDefinite { .. }) => {
            let mut aj = a.clone();
            aj.add_scaled_identity(F::from_f64(SPD_JITTER));
            solve_spd(&aj, b)
        }
        Err(e) => Err(e),
    }
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns the eigenvalues and the orthogonal matrix whose columns are the
/// matching eigenvectors (`A = V diag(d) V^T`). Eigenvalues are not sorted;
/// the cyclic sweep order makes the output deterministic. Fails with
/// [`Error::EigenNonConvergence`] if `max_sweeps` sweeps do not reduce the
/// off-diagonal mass to the convergence threshold.
pub fn jacobi_eigen_sym<F: Scalar>(a: &Mat<F>, max_sweeps: usize) -> Result<(Vec<F>, Mat<F>)> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "jacobi_eigen_sym needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Mat::identity(n);
    let mut d: Vec<F> = (0..n).map(|i| m.at(i, i)).collect();
    let mut b = d.clone();
    let mut z = vec![F::zero(); n];

    if n == 1 {
        return Ok((d, v));
    }

    // Convergence is relative to the overall scale of the matrix.
    let scale = m.frobenius_norm();
    let tiny = F::from_f64(5e-15) * (scale + F::one());
    let hundred = F::from_f64(100.0);
    let half = F::from_f64(0.5);

    for sweep in 0..max_sweeps {
        let mut sm = F::zero();
        for i in 0..n - 1 {
            for j in (i + 1)..n {
                sm += m.at(i, j).abs();
            }
        }
        if sm <= tiny {
            return Ok((d, v));
        }
        // Skip small rotations during early sweeps, as in the classic scheme.
        let tresh = if sweep < 3 {
            F::from_f64(0.2) * sm / F::from_f64((n * n) as f64)
        } else {
            F::zero()
        };
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                let g = hundred * apq.abs();
                // After a few sweeps, annihilate entries that are negligible
                // relative to both diagonal entries.
                if sweep >= 4 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    m.set(p, q, F::zero());
                    continue;
                }
                if apq.abs() <= tresh {
                    continue;
                }
                let mut h = d[q] - d[p];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = half * h / apq;
                    let mut t = F::one() / (theta.abs() + (F::one() + theta * theta).sqrt());
                    if theta < F::zero() {
                        t = -t;
                    }
                    t
                };
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = t * c;
                let tau = s / (F::one() + c);
                h = t * apq;
                z[p] -= h;
                z[q] += h;
                d[p] -= h;
                d[q] += h;
                m.set(p, q, F::zero());
                let rotate = |m: &mut Mat<F>, i: usize, j: usize, k: usize, l: usize| {
                    let g = m.at(i, j);
                    let hkl = m.at(k, l);
                    m.set(i, j, g - s * (hkl + g * tau));
                    m.set(k, l, hkl + s * (g - hkl * tau));
                };
                for j in 0..p {
                    rotate(&mut m, j, p, j, q);
                }
                for j in (p + 1)..q {
                    rotate(&mut m, p, j, j, q);
                }
                for j in (q + 1)..n {
                    rotate(&mut m, p, j, q, j);
                }
                for j in 0..n {
                    rotate(&mut v, j, p, j, q);
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = F::zero();
        }
    }

    let mut sm = F::zero();
    for i in 0..n - 1 {
        for j in (i + 1)..n {
            sm += m.at(i, j).abs();
        }
    }
    Err(Error::EigenNonConvergence { sweeps: max_sweeps, off: sm.as_f64() })
}
