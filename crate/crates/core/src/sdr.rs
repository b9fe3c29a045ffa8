//! Semidefinite relaxation of the joint quadratic detection metric.
//!
//! The discrete problem `min_s s^T L s` over sign vectors (with the last
//! coordinate pinned to `+1` to absorb the linear term) is relaxed to
//!
//! ```text
//! minimize    tr(L X)
//! subject to  diag(X) = 1,  X >= 0 (positive semidefinite)
//! ```
//!
//! which is solved here by a self-contained ADMM: an affine step that keeps
//! the unit diagonal, a projection onto the PSD cone via the crate's Jacobi
//! eigensolver, and a scaled dual update with optional residual balancing.
//! The detected word is read off the last column of the solution, whose sign
//! pattern tracks the rank-one factor when the relaxation is (near-)tight.
//!
//! [`build_dest_sdp`] lifts a full two-hop observation into this form (signal
//! coordinates `[x; x_r]`); [`build_relay_sdp`] does the same for the single
//! source-relay hop.

use crate::error::{Error, Result};
use crate::exhaustive::StackedProblem;
use crate::linalg::{jacobi_eigen_sym, norm_sq, Mat};
use crate::model::{RealChannel, RealSignal};
use crate::scalar::Scalar;

/// Largest tolerated asymmetry (relative to the Frobenius norm) in a cost
/// matrix accepted by [`DiagSdp::new`].
const MAX_COST_ASYMMETRY: f64 = 1e-12;

/// Sweep cap handed to the Jacobi eigensolver inside the PSD projection.
const PROJECTION_MAX_SWEEPS: usize = 64;

/// A unit-diagonal semidefinite program `min tr(LX)` over the elliptope.
#[derive(Clone, Debug)]
pub struct DiagSdp<F> {
    l: Mat<F>,
    /// How many leading coordinates of the underlying sign vector carry
    /// detected bits (the remainder are auxiliary, e.g. the homogenizing
    /// `+1` coordinate and any relay-hypothesis part).
    n_signal: usize,
}

impl<F: Scalar> DiagSdp<F> {
    /// Wraps a symmetric cost matrix. Rejects non-square or visibly
    /// asymmetric inputs and signal counts that exceed the matrix order.
    pub fn new(l: Mat<F>, n_signal: usize) -> Result<Self> {
        if l.rows() != l.cols() {
            return Err(Error::DimensionMismatch(format!(
                "cost matrix must be square, got {}x{}",
                l.rows(),
                l.cols()
            )));
        }
        if l.rows() < 2 {
            return Err(Error::InvalidArgument(
                "cost matrix needs at least one free coordinate".into(),
            ));
        }
        let scale = l.frobenius_norm().as_f64().max(1.0);
        if l.asymmetry().as_f64() > MAX_COST_ASYMMETRY * scale {
            return Err(Error::InvalidArgument(format!(
                "cost matrix is asymmetric by {} (relative threshold {})",
                l.asymmetry(),
                MAX_COST_ASYMMETRY
            )));
        }
        if n_signal == 0 || n_signal >= l.rows() {
            return Err(Error::InvalidArgument(format!(
                "signal coordinate count {} must lie in 1..{}",
                n_signal,
                l.rows()
            )));
        }
        Ok(DiagSdp { l, n_signal })
    }

    /// The symmetric cost matrix.
    pub fn cost(&self) -> &Mat<F> {
        &self.l
    }

    /// Matrix order (sign-vector length including auxiliary coordinates).
    pub fn order(&self) -> usize {
        self.l.rows()
    }

    /// Number of leading detected coordinates.
    pub fn n_signal(&self) -> usize {
        self.n_signal
    }

    /// Evaluates `s^T L s` for a full sign assignment (including the
    /// homogenizing coordinate).
    pub fn quadratic_at(&self, s: &[i8]) -> Result<F> {
        if s.len() != self.order() {
            return Err(Error::DimensionMismatch(format!(
                "sign vector has {} entries, cost matrix order is {}",
                s.len(),
                self.order()
            )));
        }
        let sf: Vec<F> = s.iter().map(|&v| F::from_f64(v as f64)).collect();
        let ls = self.l.matvec(&sf);
        Ok(crate::linalg::dot(&sf, &ls))
    }

    /// Evaluates `tr(L X)`.
    pub fn objective(&self, x: &Mat<F>) -> F {
        let mut acc = F::zero();
        for (a, b) in self.l.data().iter().zip(x.data()) {
            acc += *a * *b;
        }
        acc
    }
}

/// Builds the destination relaxation from a stacked observation. The sign
/// vector is `[x; x_r; 1]` of length `4N + 1`; the quadratic form reproduces
/// the joint metric
/// `||y_sd - H_sd x||^2 + ||y_rd - H_rd x_r||^2 + (1/4)||H_eff (x - x_r)||^2`
/// exactly on sign vectors, so the relaxation optimum lower-bounds the
/// exhaustive search.
pub fn build_dest_sdp<F: Scalar>(prob: &StackedProblem<F>) -> Result<DiagSdp<F>> {
    let n = prob.x_len();
    let order = 2 * n + 1;
    let quarter = F::from_f64(0.25);

    let g_sd = prob.h_sd.m.gram();
    let g_rd = prob.h_rd.m.gram();
    let g = prob.h_sr_eff.m.gram();

    let mut l = Mat::zeros(order, order);
    l.insert_block(0, 0, &g_sd, F::one());
    l.insert_block(n, n, &g_rd, F::one());
    for i in 0..n {
        for j in 0..n {
            let q = quarter * g.at(i, j);
            l.add_at(i, j, q);
            l.add_at(i + n, j + n, q);
            l.add_at(i, j + n, -q);
            l.add_at(i + n, j, -q);
        }
    }
    // Cross terms appear twice in s^T L s, so storing -b in each off-diagonal
    // block yields the full -2 b^T x of the expanded residual.
    let b_sd = prob.h_sd.m.tr_matvec(&prob.y_sd);
    let b_rd = prob.h_rd.m.tr_matvec(&prob.y_rd);
    for i in 0..n {
        l.set(i, 2 * n, -b_sd[i]);
        l.set(2 * n, i, -b_sd[i]);
        l.set(i + n, 2 * n, -b_rd[i]);
        l.set(2 * n, i + n, -b_rd[i]);
    }
    l.set(2 * n, 2 * n, norm_sq(&prob.y_sd) + norm_sq(&prob.y_rd));

    // Only the source part is the detected word; the relay-hypothesis block
    // is auxiliary, like the homogenizing coordinate.
    DiagSdp::new(l, n)
}

/// Builds the single-hop relaxation used at the relay: sign vector `[x; 1]`,
/// quadratic form `||y - H x||^2` on sign vectors.
pub fn build_relay_sdp<F: Scalar>(y: &[F], h: &RealChannel<F>) -> Result<DiagSdp<F>> {
    if y.len() != h.rows() {
        return Err(Error::DimensionMismatch(format!(
            "relay relaxation: y has {} entries for a {}x{} channel",
            y.len(),
            h.rows(),
            h.cols()
        )));
    }
    let n = h.cols();
    let mut l = Mat::zeros(n + 1, n + 1);
    l.insert_block(0, 0, &h.m.gram(), F::one());
    let b = h.m.tr_matvec(y);
    for i in 0..n {
        l.set(i, n, -b[i]);
        l.set(n, i, -b[i]);
    }
    l.set(n, n, norm_sq(y));
    DiagSdp::new(l, n)
}

/// Projects a symmetric matrix onto the positive semidefinite cone by
/// clipping negative eigenvalues to zero.
pub fn project_psd<F: Scalar>(a: &Mat<F>) -> Result<Mat<F>> {
    let (vals, vecs) = jacobi_eigen_sym(a, PROJECTION_MAX_SWEEPS)?;
    let n = a.rows();
    let mut out = Mat::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= F::zero() {
            continue;
        }
        let v = vecs.col(k);
        for i in 0..n {
            let s = lam * v[i];
            for j in 0..n {
                out.add_at(i, j, s * v[j]);
            }
        }
    }
    out.symmetrize();
    Ok(out)
}

/// ADMM settings for [`solve_diag_sdp`].
#[derive(Clone, Copy, Debug)]
pub struct SdpConfig {
    /// Stopping threshold on the larger of the primal and dual residuals.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Initial penalty parameter.
    pub rho: f64,
    /// Enables residual balancing (doubling/halving `rho` when the residuals
    /// drift more than a decade apart).
    pub adapt: bool,
    /// Records `(primal, dual)` residuals every iteration.
    pub collect_trace: bool,
}

impl Default for SdpConfig {
    fn default() -> Self {
        SdpConfig { tol: 1e-6, max_iter: 5000, rho: 1.0, adapt: true, collect_trace: false }
    }
}

impl SdpConfig {
    /// Looser settings for Monte Carlo detection, where the extracted sign
    /// pattern stabilizes long before the iterates do.
    pub fn detection() -> Self {
        SdpConfig { tol: 1e-4, max_iter: 600, ..Self::default() }
    }
}

/// Outcome of an ADMM run.
#[derive(Clone, Debug)]
pub struct SdpSolution<F> {
    /// Final unit-diagonal iterate (diagonal is exactly one by construction).
    pub x: Mat<F>,
    /// Whether both residuals fell below the tolerance before the cap.
    pub converged: bool,
    /// Iterations performed.
    pub iterations: usize,
    /// Per-iteration `(primal, dual)` residuals when requested.
    pub trace: Option<Vec<(f64, f64)>>,
}

/// Runs ADMM on the unit-diagonal relaxation.
///
/// Splitting: `X` carries the affine diagonal constraint and the gradient of
/// the linear objective, `Z` carries the PSD constraint, `U` is the scaled
/// dual. Residual balancing rescales `U` whenever `rho` changes so the scaled
/// iteration stays equivalent to the unscaled one.
pub fn solve_diag_sdp<F: Scalar>(sdp: &DiagSdp<F>, cfg: &SdpConfig) -> Result<SdpSolution<F>> {
    if cfg.tol <= 0.0 || cfg.rho <= 0.0 || cfg.max_iter == 0 {
        return Err(Error::InvalidArgument(format!(
            "ADMM needs positive tol, rho and max_iter (got {}, {}, {})",
            cfg.tol, cfg.rho, cfg.max_iter
        )));
    }
    let n = sdp.order();
    let mut rho = F::from_f64(cfg.rho);
    let mut z = Mat::<F>::identity(n);
    let mut u = Mat::<F>::zeros(n, n);
    let mut x = Mat::<F>::identity(n);
    let mut trace = if cfg.collect_trace { Some(Vec::new()) } else { None };
    let tol = F::from_f64(cfg.tol);
    let balance = F::from_f64(10.0);
    let two = F::from_f64(2.0);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;

        // X-step: minimize tr(LX) + (rho/2)||X - Z + U||_F^2 subject to
        // diag(X) = 1. Unconstrained minimizer is Z - U - L/rho; the diagonal
        // constraint projects componentwise.
        for i in 0..n {
            for j in 0..n {
                let v = z.at(i, j) - u.at(i, j) - sdp.l.at(i, j) / rho;
                x.set(i, j, v);
            }
            x.set(i, i, F::one());
        }

        // Z-step: PSD projection of X + U.
        let mut xu = x.clone();
        xu.add_scaled(&u, F::one());
        let z_prev = z;
        z = project_psd(&xu)?;

        // Dual update and residuals.
        let mut primal = F::zero();
        let mut dual = F::zero();
        for i in 0..n {
            for j in 0..n {
                let r = x.at(i, j) - z.at(i, j);
                u.add_at(i, j, r);
                primal += r * r;
                let d = z.at(i, j) - z_prev.at(i, j);
                dual += d * d;
            }
        }
        let primal = primal.sqrt();
        let dual = rho * dual.sqrt();
        if let Some(t) = trace.as_mut() {
            t.push((primal.as_f64(), dual.as_f64()));
        }
        if primal.max(dual) < tol {
            converged = true;
            break;
        }
        if cfg.adapt {
            if primal > balance * dual {
                rho *= two;
                u.scale(F::from_f64(0.5));
            } else if dual > balance * primal {
                rho *= F::from_f64(0.5);
                u.scale(two);
            }
        }
    }

    Ok(SdpSolution { x, converged, iterations, trace })
}

/// Reads the detected word out of a relaxation solution: the sign pattern of
/// the first `n_signal` entries of the last column. The last diagonal entry
/// is pinned to one, so the column is automatically expressed relative to the
/// homogenizing coordinate and a global sign flip cannot occur.
pub fn sdr_extract<F: Scalar>(sdp: &DiagSdp<F>, sol: &SdpSolution<F>) -> RealSignal {
    let last = sdp.order() - 1;
    let soft: Vec<F> = (0..sdp.n_signal()).map(|i| sol.x.at(i, last)).collect();
    RealSignal::from_soft(&soft)
}

/// Convenience wrapper: build, solve and extract for the destination.
pub fn sdr_detect_dest<F: Scalar>(
    prob: &StackedProblem<F>,
    cfg: &SdpConfig,
) -> Result<(RealSignal, SdpSolution<F>)> {
    let sdp = build_dest_sdp(prob)?;
    let sol = solve_diag_sdp(&sdp, cfg)?;
    Ok((sdr_extract(&sdp, &sol), sol))
}

/// Convenience wrapper: build, solve and extract for the relay hop.
pub fn sdr_detect_relay<F: Scalar>(
    y_sr: &[F],
    h_sr: &RealChannel<F>,
    cfg: &SdpConfig,
) -> Result<(RealSignal, SdpSolution<F>)> {
    let sdp = build_relay_sdp(y_sr, h_sr)?;
    let sol = solve_diag_sdp(&sdp, cfg)?;
    Ok((sdr_extract(&sdp, &sol), sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exhaustive::nml_metric;
    use crate::model::{sample_channel, transmit, SystemDims};
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, sigma2: f64) -> (StackedProblem<f64>, RealSignal) {
        let dims = SystemDims::new(n, n, n).unwrap();
        let h_sd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, rng).unwrap();
        let h_rd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, rng).unwrap();
        let h_sr = sample_channel::<f64, _>(dims.n_r, dims.n, 1.0, rng).unwrap();
        let x = RealSignal::random(dims.x_len(), rng);
        let y_sd = transmit(&h_sd, &x, sigma2, rng).unwrap();
        let y_rd = transmit(&h_rd, &x, sigma2, rng).unwrap();
        let prob = StackedProblem::new(y_sd, y_rd, h_sd, h_rd, h_sr, sigma2.max(1e-12)).unwrap();
        (prob, x)
    }

    #[test]
    fn destination_cost_matrix_reproduces_joint_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for _ in 0..30 {
            let (prob, _) = random_problem(&mut rng, 2, 0.5);
            let sdp = build_dest_sdp(&prob).unwrap();
            let n = prob.x_len();
            oracle::enumerate_signs(2 * n, |s| {
                let mut full = s.to_vec();
                full.push(1);
                let got = sdp.quadratic_at(&full).unwrap();
                let x = RealSignal::new(s[..n].to_vec()).unwrap();
                let xr = RealSignal::new(s[n..].to_vec()).unwrap();
                let want = nml_metric(&prob, &x, &xr).unwrap();
                assert!(
                    (got - want).abs() < 1e-9 * (1.0 + want.abs()),
                    "quadratic form {got} vs metric {want}"
                );
            });
        }
    }

    #[test]
    fn relay_cost_matrix_reproduces_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        for _ in 0..30 {
            let h = sample_channel::<f64, _>(3, 2, 1.0, &mut rng).unwrap();
            let x = RealSignal::random(4, &mut rng);
            let y = transmit(&h, &x, 0.8, &mut rng).unwrap();
            let sdp = build_relay_sdp(&y, &h).unwrap();
            oracle::enumerate_signs(4, |s| {
                let mut full = s.to_vec();
                full.push(1);
                let got = sdp.quadratic_at(&full).unwrap();
                let want = oracle::residual_sq(&y, &h.m, s);
                assert!((got - want).abs() < 1e-9 * (1.0 + want));
            });
        }
    }

    #[test]
    fn asymmetric_cost_is_rejected() {
        let mut l = Mat::identity(3);
        l.set(0, 1, 0.5);
        assert!(DiagSdp::new(l, 2).is_err());
    }

    #[test]
    fn psd_projection_clips_negative_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        for _ in 0..20 {
            let raw = Mat::from_fn(5, 5, |_, _| {
                crate::model::sample_standard_normal::<f64, _>(&mut rng)
            });
            let mut sym = raw.clone();
            sym.symmetrize();
            let proj = project_psd(&sym).unwrap();
            let eigs = oracle::classical_jacobi_eigenvalues(&proj);
            for e in &eigs {
                assert!(*e >= -1e-10, "projected matrix has eigenvalue {e}");
            }
            // Projection is the identity on PSD matrices.
            let again = project_psd(&proj).unwrap();
            let mut diff = 0.0f64;
            for (a, b) in again.data().iter().zip(proj.data()) {
                diff += (a - b) * (a - b);
            }
            assert!(diff.sqrt() < 1e-8 * (1.0 + proj.frobenius_norm()));
            // Eigenvalues of the projection match the clipped originals.
            let orig = oracle::classical_jacobi_eigenvalues(&sym);
            let mut clipped: Vec<f64> = orig.iter().map(|e| e.max(0.0)).collect();
            clipped.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut got = eigs.clone();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, w) in got.iter().zip(&clipped) {
                assert!((g - w).abs() < 1e-9 * (1.0 + w.abs()));
            }
        }
    }

    #[test]
    fn relaxation_lower_bounds_discrete_minimum_and_stays_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let cfg = SdpConfig::default();
        for trial in 0..12 {
            let (prob, _) = random_problem(&mut rng, 2, if trial % 2 == 0 { 0.4 } else { 2.0 });
            let sdp = build_dest_sdp(&prob).unwrap();
            let sol = solve_diag_sdp(&sdp, &cfg).unwrap();
            assert!(sol.converged, "ADMM did not converge in {} iterations", sol.iterations);

            // Lower bound on the discrete minimum.
            let (disc_min, _) = oracle::brute_force_quadratic_min(sdp.cost());
            let obj = sdp.objective(&sol.x).max(sdp.objective(&project_psd(&sol.x).unwrap()));
            assert!(
                obj <= disc_min + 1e-4 * (1.0 + disc_min.abs()),
                "relaxation objective {obj} exceeds discrete minimum {disc_min}"
            );

            // Feasibility: exact unit diagonal, near-PSD.
            for i in 0..sdp.order() {
                assert_eq!(sol.x.at(i, i), 1.0);
            }
            let eigs = oracle::classical_jacobi_eigenvalues(&sol.x);
            for e in eigs {
                assert!(e >= -1e-5, "solution eigenvalue {e} below feasibility slack");
            }
        }
    }

    #[test]
    fn noiseless_observations_decode_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let cfg = SdpConfig::default();
        for _ in 0..10 {
            let dims = SystemDims::new(2, 2, 2).unwrap();
            let h_sd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
            let h_rd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
            let h_sr = sample_channel::<f64, _>(dims.n_r, dims.n, 1.0, &mut rng).unwrap();
            let x = RealSignal::random(dims.x_len(), &mut rng);
            let y_sd = transmit(&h_sd, &x, 0.0, &mut rng).unwrap();
            let y_rd = transmit(&h_rd, &x, 0.0, &mut rng).unwrap();
            let y_sr = transmit(&h_sr, &x, 0.0, &mut rng).unwrap();

            let prob =
                StackedProblem::new(y_sd, y_rd, h_sd, h_rd, h_sr.clone(), 1e-9).unwrap();
            let (word, sol) = sdr_detect_dest(&prob, &cfg).unwrap();
            assert!(sol.converged);
            assert_eq!(word, x, "destination relaxation missed the noiseless word");

            let (relay_word, _) = sdr_detect_relay(&y_sr, &h_sr, &cfg).unwrap();
            assert_eq!(relay_word, x, "relay relaxation missed the noiseless word");
        }
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let (prob, _) = random_problem(&mut rng, 2, 0.5);
        let sdp = build_dest_sdp(&prob).unwrap();
        let cfg = SdpConfig { max_iter: 2, ..SdpConfig::default() };
        let sol = solve_diag_sdp(&sdp, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 2);
    }

    #[test]
    fn residual_trace_shrinks_overall() {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let (prob, _) = random_problem(&mut rng, 2, 1.0);
        let sdp = build_dest_sdp(&prob).unwrap();
        let cfg = SdpConfig { collect_trace: true, ..SdpConfig::default() };
        let sol = solve_diag_sdp(&sdp, &cfg).unwrap();
        let trace = sol.trace.as_ref().unwrap();
        assert_eq!(trace.len(), sol.iterations);
        let first = trace.first().unwrap();
        let last = trace.last().unwrap();
        assert!(last.0.max(last.1) < first.0.max(first.1));
        assert!(last.0.max(last.1) < cfg.tol);
    }

    #[test]
    fn detection_config_recovers_high_snr_words() {
        // The loose Monte Carlo settings still decode comfortably above the
        // noise floor.
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let cfg = SdpConfig::detection();
        let mut agree = 0;
        let total = 20;
        for _ in 0..total {
            let (prob, x) = random_problem(&mut rng, 2, 0.01);
            let (word, _) = sdr_detect_dest(&prob, &cfg).unwrap();
            if word == x {
                agree += 1;
            }
        }
        assert!(agree >= total - 1, "only {agree}/{total} decoded at high SNR");
    }
}
