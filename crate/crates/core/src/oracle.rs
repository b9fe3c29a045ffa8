//! Independent reference implementations for cross-checking.
//!
//! Everything in this module is deliberately written from scratch, with its
//! own enumeration strategy and its own formulas, so it can serve as a test
//! oracle for the production detectors and solvers: the `oracle` CLI
//! subcommand and the test suites compare optimized code against these slow,
//! obviously-correct versions. Keep this module free of calls into the
//! detector implementations it is meant to check (basic matrix storage is
//! shared; algorithms are not).
//!
//! All oracles work in `f64`.

use crate::linalg::Mat;

/// Calls `f` for every sign vector of the given length, in lexicographic
/// order with `-1` before `+1`. Uses an odometer increment rather than bit
/// indexing so the enumeration path is independent of the production one.
pub fn enumerate_signs(len: usize, mut f: impl FnMut(&[i8])) {
    assert!(len > 0 && len < 32, "oracle enumeration limited to 31 entries");
    let mut s = vec![-1i8; len];
    loop {
        f(&s);
        // Find the last -1, flip it to +1, reset everything after it.
        let mut pos = len;
        for i in (0..len).rev() {
            if s[i] == -1 {
                pos = i;
                break;
            }
        }
        if pos == len {
            return; // all +1: enumeration finished
        }
        s[pos] = 1;
        for v in s.iter_mut().skip(pos + 1) {
            *v = -1;
        }
    }
}

/// `|| y - H s ||^2` with explicit loops.
pub fn residual_sq(y: &[f64], h: &Mat<f64>, s: &[i8]) -> f64 {
    assert_eq!(y.len(), h.rows());
    assert_eq!(s.len(), h.cols());
    let mut acc = 0.0;
    for i in 0..h.rows() {
        let mut r = y[i];
        for j in 0..h.cols() {
            r -= h.at(i, j) * s[j] as f64;
        }
        acc += r * r;
    }
    acc
}

/// `|| H (a - b) ||^2` with explicit loops.
pub fn pair_distance_sq(h: &Mat<f64>, a: &[i8], b: &[i8]) -> f64 {
    assert_eq!(a.len(), h.cols());
    assert_eq!(b.len(), h.cols());
    let mut acc = 0.0;
    for i in 0..h.rows() {
        let mut r = 0.0;
        for j in 0..h.cols() {
            r += h.at(i, j) * (a[j] - b[j]) as f64;
        }
        acc += r * r;
    }
    acc
}

/// Gaussian tail probability by adaptive Simpson quadrature of the standard
/// normal density. Accurate to roughly 1e-13 absolute over |x| <= 8, which is
/// far tighter than anything the production implementation promises.
pub fn q_reference(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - q_reference(-x);
    }
    // The density below x + 45 carries all mass representable in f64.
    let upper = x + 45.0;
    integrate_normal_density(x, upper)
}

fn normal_density(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn integrate_normal_density(a: f64, b: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = normal_density(lm);
        let frm = normal_density(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        // Terminate on either an absolute floor (1e-16 per unit panel keeps
        // the summed error near 1e-15 over the widest range used) or a
        // relative target comfortably above roundoff noise in `delta`.
        if depth == 0 || delta.abs() <= (1e-13 * (left + right).abs()).max(1e-16) {
            return left + right + delta / 15.0;
        }
        recurse(a, m, fa, flm, fm, left, depth - 1) + recurse(m, b, fm, frm, fb, right, depth - 1)
    }
    // Split the range into unit-width panels so the adaptive recursion starts
    // from well-scaled intervals even when b - a is large.
    let mut total = 0.0;
    let mut lo = a;
    while lo < b {
        let hi = (lo + 1.0).min(b);
        let mid = 0.5 * (lo + hi);
        let (fa, fm, fb) = (normal_density(lo), normal_density(mid), normal_density(hi));
        total += recurse(lo, hi, fa, fm, fb, simpson(fa, fm, fb, hi - lo), 40);
        lo = hi;
    }
    total
}

/// Relay-error penalty variants understood by [`brute_force_joint`].
#[derive(Clone, Copy, Debug)]
pub enum OraclePenalty {
    /// `-sigma^2 ln` of the pairwise error probability, computed with
    /// [`q_reference`]; probability 1 when the hypotheses agree.
    Exact,
    /// Flat penalty `sigma^2 ln(1 / p_e)` whenever the hypotheses differ.
    TwoLevel { p_e: f64 },
    /// `(1/4) || x - x_r ||^2`, no channel knowledge.
    SignalDistance,
}

/// Exhaustive joint search over both hypotheses with independently coded
/// metrics. Returns the source-word part of the minimizer; ties resolve to the
/// lexicographically smallest stacked pair because the enumeration is
/// lexicographic and replacement is strict.
pub fn brute_force_joint(
    y_sd: &[f64],
    y_rd: &[f64],
    h_sd: &Mat<f64>,
    h_rd: &Mat<f64>,
    h_sr_eff: &Mat<f64>,
    sigma2: f64,
    penalty: OraclePenalty,
) -> Vec<i8> {
    let n = h_sd.cols();
    let mut best = f64::INFINITY;
    let mut best_x = vec![-1i8; n];
    enumerate_signs(n, |x| {
        let base_sd = residual_sq(y_sd, h_sd, x);
        enumerate_signs(n, |xr| {
            let mut m = base_sd + residual_sq(y_rd, h_rd, xr);
            m += match penalty {
                OraclePenalty::Exact => {
                    if x == xr {
                        0.0
                    } else {
                        let d2 = pair_distance_sq(h_sr_eff, x, xr);
                        let p = q_reference((d2 / (2.0 * sigma2)).sqrt());
                        -sigma2 * p.max(1e-300).ln()
                    }
                }
                OraclePenalty::TwoLevel { p_e } => {
                    if x == xr {
                        0.0
                    } else {
                        sigma2 * (1.0 / p_e).ln()
                    }
                }
                OraclePenalty::SignalDistance => {
                    let mut d = 0.0;
                    for j in 0..n {
                        let t = (x[j] - xr[j]) as f64;
                        d += t * t;
                    }
                    0.25 * d
                }
            };
            if m < best {
                best = m;
                best_x = x.to_vec();
            }
        });
    });
    best_x
}

/// Exhaustive single-hypothesis search that treats the relay word as equal to
/// the source word (no relay-error penalty).
pub fn brute_force_matched(
    y_sd: &[f64],
    y_rd: &[f64],
    h_sd: &Mat<f64>,
    h_rd: &Mat<f64>,
) -> Vec<i8> {
    let n = h_sd.cols();
    let mut best = f64::INFINITY;
    let mut best_x = vec![-1i8; n];
    enumerate_signs(n, |x| {
        let m = residual_sq(y_sd, h_sd, x) + residual_sq(y_rd, h_rd, x);
        if m < best {
            best = m;
            best_x = x.to_vec();
        }
    });
    best_x
}

/// Exhaustive maximum-likelihood search over one link.
pub fn brute_force_single(y: &[f64], h: &Mat<f64>) -> Vec<i8> {
    let n = h.cols();
    let mut best = f64::INFINITY;
    let mut best_x = vec![-1i8; n];
    enumerate_signs(n, |x| {
        let m = residual_sq(y, h, x);
        if m < best {
            best = m;
            best_x = x.to_vec();
        }
    });
    best_x
}

/// Minimum of the homogenized quadratic form `s^T L s` over sign vectors with
/// the last coordinate fixed to `+1`. Returns the minimum value and the free
/// part of the minimizer. Used to bound relaxation objectives from above.
pub fn brute_force_quadratic_min(l: &Mat<f64>) -> (f64, Vec<i8>) {
    let n = l.rows();
    assert!(n >= 2, "quadratic form needs at least one free coordinate");
    let free = n - 1;
    let mut best = f64::INFINITY;
    let mut best_s = vec![-1i8; free];
    enumerate_signs(free, |s| {
        let mut full = Vec::with_capacity(n);
        full.extend(s.iter().map(|&v| v as f64));
        full.push(1.0);
        let mut val = 0.0;
        for i in 0..n {
            for j in 0..n {
                val += full[i] * l.at(i, j) * full[j];
            }
        }
        if val < best {
            best = val;
            best_s = s.to_vec();
        }
    });
    (best, best_s)
}

/// Quadratic joint metric evaluated at a *continuous* stacked point
/// `xbar = [x; x_r]`, with explicit loops. This is the function the
/// zero-gradient receivers minimize; the finite-difference tests probe its
/// gradient at the receiver output.
pub fn quadratic_metric_continuous(
    y_sd: &[f64],
    y_rd: &[f64],
    h_sd: &Mat<f64>,
    h_rd: &Mat<f64>,
    h_sr_eff: &Mat<f64>,
    xbar: &[f64],
) -> f64 {
    let n = h_sd.cols();
    assert_eq!(xbar.len(), 2 * n);
    let (x, xr) = xbar.split_at(n);
    let mut acc = 0.0;
    for i in 0..h_sd.rows() {
        let mut r = y_sd[i];
        for j in 0..n {
            r -= h_sd.at(i, j) * x[j];
        }
        acc += r * r;
    }
    for i in 0..h_rd.rows() {
        let mut r = y_rd[i];
        for j in 0..n {
            r -= h_rd.at(i, j) * xr[j];
        }
        acc += r * r;
    }
    for i in 0..h_sr_eff.rows() {
        let mut r = 0.0;
        for j in 0..n {
            r += h_sr_eff.at(i, j) * (x[j] - xr[j]);
        }
        acc += 0.25 * r * r;
    }
    acc
}

/// Linear solve by Gauss-Jordan elimination with partial pivoting. Returns
/// `None` when a pivot collapses. Independent of the Cholesky path.
pub fn gauss_jordan_solve(a: &Mat<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a.at(i, j);
        }
        m[i][n] = b[i];
    }
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&r1, &r2| {
            m[r1][col].abs().partial_cmp(&m[r2][col].abs()).unwrap()
        })?;
        if m[pivot_row][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, pivot_row);
        let p = m[col][col];
        for j in col..=n {
            m[col][j] /= p;
        }
        for row in 0..n {
            if row != col && m[row][col] != 0.0 {
                let factor = m[row][col];
                for j in col..=n {
                    m[row][j] -= factor * m[col][j];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n]).collect())
}

/// Eigenvalues of a symmetric matrix by the classical (largest-pivot) Jacobi
/// iteration, returned in ascending order. Independent of the cyclic sweep
/// implementation used in production.
pub fn classical_jacobi_eigenvalues(a: &Mat<f64>) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a.at(i, j)).collect()).collect();
    // Symmetrize defensively.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    let scale: f64 = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-14 * (scale + 1.0);
    for _ in 0..10_000 {
        // Largest off-diagonal entry.
        let (mut p, mut q, mut big) = (0, 1, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if m[i][j].abs() > big {
                    big = m[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if n < 2 || big <= tol {
            break;
        }
        let theta = 0.5 * (m[q][q] - m[p][p]) / m[p][q];
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let mkp = m[k][p];
            let mkq = m[k][q];
            m[k][p] = c * mkp - s * mkq;
            m[k][q] = s * mkp + c * mkq;
        }
        for k in 0..n {
            let mpk = m[p][k];
            let mqk = m[q][k];
            m[p][k] = c * mpk - s * mqk;
            m[q][k] = s * mpk + c * mqk;
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_visits_every_sign_vector_once() {
        let mut seen = Vec::new();
        enumerate_signs(3, |s| seen.push(s.to_vec()));
        assert_eq!(seen.len(), 8);
        let mut sorted = seen.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8, "duplicates in enumeration");
        // Lexicographic order with -1 < +1.
        for w in seen.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert_eq!(seen[0], vec![-1, -1, -1]);
        assert_eq!(seen[7], vec![1, 1, 1]);
    }

    #[test]
    fn quadrature_tail_matches_known_values() {
        // Reference values for the standard normal tail.
        assert!((q_reference(0.0) - 0.5).abs() < 1e-13);
        assert!((q_reference(1.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!((q_reference(3.0) - 1.349_898_031_630_094_5e-3).abs() < 1e-14);
        assert!((q_reference(-1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        // Symmetry.
        for x in [0.3, 1.7, 2.9] {
            assert!((q_reference(x) + q_reference(-x) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn gauss_jordan_inverts_small_system() {
        let a = Mat::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let b = vec![1.0, 2.0];
        let x = gauss_jordan_solve(&a, &b).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn classical_jacobi_matches_hand_computed_spectrum() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let eig = classical_jacobi_eigenvalues(&a);
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fd_gradient_matches_analytic_quadratic() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[0] * x[1] + 2.0 * x[1] * x[1];
        let x = vec![0.7, -0.3];
        let g = fd_gradient(f, &x, 1e-6);
        assert!((g[0] - (2.0 * x[0] + 3.0 * x[1])).abs() < 1e-8);
        assert!((g[1] - (3.0 * x[0] + 4.0 * x[1])).abs() < 1e-8);
    }
}
