//! Linear receivers: zero-gradient joint estimation and zero-forcing.
//!
//! The joint quadratic metric (see [`crate::exhaustive::nml_metric`]) is a
//! convex function of the stacked hypothesis `xbar = [x; x_r]`. Setting its
//! gradient to zero gives the linear estimate
//!
//! ```text
//! xtilde = (H_d^T H_d + H_r^T H_r)^{-1} H_d^T ybar
//! ```
//!
//! whose sign pattern on the first `2N` coordinates is the detected word.
//! `H_d^T H_d` is block diagonal in the two destination Gram matrices, and
//! `H_r^T H_r` expands to `(1/4) [[G, -G], [-G, G]]` with `G` the Gram matrix
//! of the effective source-relay channel; swapping `G` for `sigma^2 ln(1/P_e) I`
//! or plain `I` gives the substituted variants, all through the same
//! [`zg_build`] entry point with a different effective channel.
//!
//! The module also provides the relay-side zero-forcing front end, its
//! diagonal equivalent channel (per-stream gains behind the inverted Gram),
//! and the maximum-ratio-combining baseline that ignores relay errors.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_spd_jittered, Mat};
use crate::model::{RealChannel, RealSignal};
use crate::scalar::Scalar;

/// Precomputed normal equations of the joint quadratic metric.
#[derive(Clone, Debug)]
pub struct ZgSystem<F> {
    /// `H_d^T H_d + H_r^T H_r`, a `4N x 4N` symmetric positive semidefinite
    /// matrix.
    pub gram_total: Mat<F>,
    /// `H_d^T` as one `4N x (2N_sd + 2N_rd)` block-diagonal map applied to the
    /// stacked receive vector.
    pub rhs_map: Mat<F>,
}

/// Assembles the normal equations for the given destination channels and
/// effective source-relay channel.
pub fn zg_build<F: Scalar>(
    h_sd: &RealChannel<F>,
    h_rd: &RealChannel<F>,
    h_sr_eff: &RealChannel<F>,
) -> Result<ZgSystem<F>> {
    let n = h_sd.cols();
    if h_rd.cols() != n || h_sr_eff.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "zg_build: transmit dimensions disagree ({}, {}, {})",
            n,
            h_rd.cols(),
            h_sr_eff.cols()
        )));
    }
    let quarter = F::from_f64(0.25);
    let g_sd = h_sd.m.gram();
    let g_rd = h_rd.m.gram();
    let g = h_sr_eff.m.gram();

    let mut gram_total = Mat::zeros(2 * n, 2 * n);
    gram_total.insert_block(0, 0, &g_sd, F::one());
    gram_total.insert_block(n, n, &g_rd, F::one());
    for i in 0..n {
        for j in 0..n {
            let q = quarter * g.at(i, j);
            gram_total.add_at(i, j, q);
            gram_total.add_at(i + n, j + n, q);
            gram_total.set(i, j + n, -q);
            gram_total.set(i + n, j, -q);
        }
    }

    let mut rhs_map = Mat::zeros(2 * n, h_sd.rows() + h_rd.rows());
    let h_sd_t = h_sd.m.transpose();
    let h_rd_t = h_rd.m.transpose();
    rhs_map.insert_block(0, 0, &h_sd_t, F::one());
    rhs_map.insert_block(n, h_sd.rows(), &h_rd_t, F::one());

    Ok(ZgSystem { gram_total, rhs_map })
}

/// Solves the normal equations for the stacked soft estimate `xtilde`
/// (length `4N`: source part first, relay part second).
pub fn zg_estimate<F: Scalar>(sys: &ZgSystem<F>, y_sd: &[F], y_rd: &[F]) -> Result<Vec<F>> {
    if y_sd.len() + y_rd.len() != sys.rhs_map.cols() {
        return Err(Error::DimensionMismatch(format!(
            "zg_estimate: stacked receive vector has {} entries, map expects {}",
            y_sd.len() + y_rd.len(),
            sys.rhs_map.cols()
        )));
    }
    let mut ybar = Vec::with_capacity(sys.rhs_map.cols());
    ybar.extend_from_slice(y_sd);
    ybar.extend_from_slice(y_rd);
    let rhs = sys.rhs_map.matvec(&ybar);
    solve_spd_jittered(&sys.gram_total, &rhs)
}

/// Zero-gradient detection: sign pattern of the source part of the stacked
/// soft estimate.
pub fn zg_detect<F: Scalar>(sys: &ZgSystem<F>, y_sd: &[F], y_rd: &[F]) -> Result<RealSignal> {
    let est = zg_estimate(sys, y_sd, y_rd)?;
    let n = est.len() / 2;
    Ok(RealSignal::from_soft(&est[..n]))
}

/// Zero-forcing with maximum-ratio combining across both destination links,
/// treating the relay as error-free:
/// `phi( (G_sd + G_rd)^{-1} (H_sd^T y_sd + H_rd^T y_rd) )`.
pub fn zfwmrc_detect<F: Scalar>(
    h_sd: &RealChannel<F>,
    h_rd: &RealChannel<F>,
    y_sd: &[F],
    y_rd: &[F],
) -> Result<RealSignal> {
    if h_sd.cols() != h_rd.cols() {
        return Err(Error::DimensionMismatch(format!(
            "zfwmrc_detect: transmit dimensions disagree ({}, {})",
            h_sd.cols(),
            h_rd.cols()
        )));
    }
    if y_sd.len() != h_sd.rows() || y_rd.len() != h_rd.rows() {
        return Err(Error::DimensionMismatch(
            "zfwmrc_detect: receive vector lengths do not match the channels".into(),
        ));
    }
    let mut gram = h_sd.m.gram();
    gram.add_scaled(&h_rd.m.gram(), F::one());
    let mut rhs = h_sd.m.tr_matvec(y_sd);
    let rhs_rd = h_rd.m.tr_matvec(y_rd);
    for (a, b) in rhs.iter_mut().zip(&rhs_rd) {
        *a += *b;
    }
    let est = solve_spd_jittered(&gram, &rhs)?;
    Ok(RealSignal::from_soft(&est))
}

/// Soft zero-forcing estimate of one hop, `(H^T H)^{-1} H^T y`.
pub fn zf_estimate<F: Scalar>(y: &[F], h: &RealChannel<F>) -> Result<Vec<F>> {
    if y.len() != h.rows() {
        return Err(Error::DimensionMismatch(format!(
            "zf_estimate: y has {} entries for a {}x{} channel",
            y.len(),
            h.rows(),
            h.cols()
        )));
    }
    let gram = h.m.gram();
    let rhs = h.m.tr_matvec(y);
    solve_spd_jittered(&gram, &rhs)
}

/// Zero-forcing detection at the relay: sign pattern of [`zf_estimate`].
pub fn zf_at_relay<F: Scalar>(y_sr: &[F], h_sr: &RealChannel<F>) -> Result<RealSignal> {
    Ok(RealSignal::from_soft(&zf_estimate(y_sr, h_sr)?))
}

/// Diagonal equivalent channel of a zero-forcing front end: per-stream gains
/// `1 / sqrt( [(H^T H)^{-1}]_jj )`, returned as a diagonal channel. This is
/// the channel a destination should assume for the source-relay hop when the
/// relay detects by zero forcing: stream `j` behaves like an independent
/// scalar link with that gain.
pub fn zf_equivalent_channel<F: Scalar>(h_sr: &RealChannel<F>) -> Result<RealChannel<F>> {
    if h_sr.rows() < h_sr.cols() {
        return Err(Error::InvalidArgument(format!(
            "zf_equivalent_channel: channel is {}x{}, needs at least as many rows as columns",
            h_sr.rows(),
            h_sr.cols()
        )));
    }
    let gram = h_sr.m.gram();
    let factor = match cholesky(&gram) {
        Ok(f) => f,
        Err(Error::NotPositiveDefinite { .. }) => {
            let mut g = gram.clone();
            g.add_scaled_identity(F::from_f64(1e-10));
            cholesky(&g)?
        }
        Err(e) => return Err(e),
    };
    let inv = factor.inverse();
    let gains: Vec<F> = (0..gram.rows()).map(|j| F::one() / inv.at(j, j).sqrt()).collect();
    RealChannel::diagonal_equivalent(&gains)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_sq;
    use crate::model::{sample_channel, transmit, Provenance, SystemDims};
    use crate::oracle;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gram_total_has_documented_block_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let dims = SystemDims::new(2, 3, 2).unwrap();
        let h_sd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
        let h_rd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
        let h_sr = sample_channel::<f64, _>(dims.n_r, dims.n, 1.0, &mut rng).unwrap();
        let sys = zg_build(&h_sd, &h_rd, &h_sr).unwrap();

        let n = dims.x_len();
        let g_sd = h_sd.m.gram();
        let g_rd = h_rd.m.gram();
        let g = h_sr.m.gram();
        for i in 0..n {
            for j in 0..n {
                let q = 0.25 * g.at(i, j);
                assert!((sys.gram_total.at(i, j) - (g_sd.at(i, j) + q)).abs() < 1e-12);
                assert!((sys.gram_total.at(i + n, j + n) - (g_rd.at(i, j) + q)).abs() < 1e-12);
                assert!((sys.gram_total.at(i, j + n) + q).abs() < 1e-12);
                assert!((sys.gram_total.at(i + n, j) + q).abs() < 1e-12);
            }
        }
        assert_eq!(sys.gram_total.asymmetry(), 0.0);
    }

    #[test]
    fn zero_gradient_estimate_has_vanishing_gradient() {
        // The estimate must zero the gradient of the continuous quadratic
        // metric; probe with central finite differences.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let dims = SystemDims::new(2, 2, 2).unwrap();
        for _ in 0..25 {
            let h_sd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
            let h_rd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
            let h_sr = sample_channel::<f64, _>(dims.n_r, dims.n, 1.0, &mut rng).unwrap();
            let y_sd: Vec<f64> = (0..dims.dest_rx_len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let y_rd: Vec<f64> = (0..dims.dest_rx_len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let sys = zg_build(&h_sd, &h_rd, &h_sr).unwrap();
            let est = zg_estimate(&sys, &y_sd, &y_rd).unwrap();
            let grad = oracle::fd_gradient(
                |xbar| {
                    oracle::quadratic_metric_continuous(
                        &y_sd, &y_rd, &h_sd.m, &h_rd.m, &h_sr.m, xbar,
                    )
                },
                &est,
                1e-5,
            );
            for g in grad {
                assert!(g.abs() < 1e-6, "gradient component {g} not zero");
            }
        }
    }

    #[test]
    fn zg_estimate_matches_independent_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let dims = SystemDims::new(2, 2, 3).unwrap();
        let h_sd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
        let h_rd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
        let h_sr = sample_channel::<f64, _>(dims.n_r, dims.n, 1.0, &mut rng).unwrap();
        let y_sd: Vec<f64> = (0..dims.dest_rx_len()).map(|_| rng.random::<f64>() - 0.5).collect();
        let y_rd: Vec<f64> = (0..dims.dest_rx_len()).map(|_| rng.random::<f64>() - 0.5).collect();

        let sys = zg_build(&h_sd, &h_rd, &h_sr).unwrap();
        let est = zg_estimate(&sys, &y_sd, &y_rd).unwrap();

        let mut ybar = y_sd.clone();
        ybar.extend_from_slice(&y_rd);
        let rhs = sys.rhs_map.matvec(&ybar);
        let want = oracle::gauss_jordan_solve(&sys.gram_total, &rhs).unwrap();
        for (a, b) in est.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_forcing_inverts_noiseless_links() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..20 {
            let h = sample_channel::<f64, _>(3, 2, 1.0, &mut rng).unwrap();
            let x = RealSignal::random(4, &mut rng);
            let y = transmit(&h, &x, 0.0, &mut rng).unwrap();
            let est = zf_estimate(&y, &h).unwrap();
            let xs = x.to_scalars::<f64>();
            for (e, t) in est.iter().zip(&xs) {
                assert!((e - t).abs() < 1e-8);
            }
            assert_eq!(zf_at_relay(&y, &h).unwrap(), x);
        }
    }

    #[test]
    fn combining_detector_recovers_noiseless_word() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let dims = SystemDims::new(2, 2, 2).unwrap();
        for _ in 0..20 {
            let h_sd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
            let h_rd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
            let x = RealSignal::random(dims.x_len(), &mut rng);
            let y_sd = transmit(&h_sd, &x, 0.0, &mut rng).unwrap();
            let y_rd = transmit(&h_rd, &x, 0.0, &mut rng).unwrap();
            assert_eq!(zfwmrc_detect(&h_sd, &h_rd, &y_sd, &y_rd).unwrap(), x);
        }
    }

    #[test]
    fn equivalent_channel_gains_match_inverse_gram_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..20 {
            let h = sample_channel::<f64, _>(4, 2, 1.0, &mut rng).unwrap();
            let eq = zf_equivalent_channel(&h).unwrap();
            assert_eq!(eq.provenance, Provenance::DiagonalEquivalent);
            // Independent path: invert the Gram with Gauss-Jordan columns.
            let gram = h.m.gram();
            let n = gram.rows();
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col = oracle::gauss_jordan_solve(&gram, &e).unwrap();
                let want = 1.0 / col[j].sqrt();
                assert!((eq.m.at(j, j) - want).abs() < 1e-8 * want);
                assert!(eq.m.at(j, j) > 0.0);
            }
            // Off-diagonal entries are zero.
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        assert_eq!(eq.m.at(i, j), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn equivalent_channel_requires_tall_matrix() {
        let h = RealChannel::<f64> {
            m: crate::linalg::Mat::zeros(2, 4),
            provenance: Provenance::FromComplex,
        };
        assert!(zf_equivalent_channel(&h).is_err());
    }

    #[test]
    fn substituted_effective_channels_change_the_coupling() {
        // With a zero effective channel the two halves decouple into separate
        // zero-forcing problems; with a huge scaled identity the two halves
        // are forced together.
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let dims = SystemDims::new(2, 2, 2).unwrap();
        let h_sd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
        let h_rd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
        let y_sd: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
        let y_rd: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();

        let zero = RealChannel::<f64>::zero(4, 4);
        let sys = zg_build(&h_sd, &h_rd, &zero).unwrap();
        let est = zg_estimate(&sys, &y_sd, &y_rd).unwrap();
        let zf_sd = zf_estimate(&y_sd, &h_sd).unwrap();
        for (a, b) in est[..4].iter().zip(&zf_sd) {
            assert!((a - b).abs() < 1e-8, "decoupled estimate should be per-link zero forcing");
        }

        let strong = RealChannel::<f64>::scaled_identity(4, 1e4);
        let sys = zg_build(&h_sd, &h_rd, &strong).unwrap();
        let est = zg_estimate(&sys, &y_sd, &y_rd).unwrap();
        for i in 0..4 {
            assert!(
                (est[i] - est[i + 4]).abs() < 1e-4,
                "strong coupling should equalize the halves"
            );
        }
    }

    #[test]
    fn norm_of_zg_residual_is_small() {
        // gram_total * xtilde = rhs holds to solver precision.
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let dims = SystemDims::new(3, 3, 3).unwrap();
        let h_sd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
        let h_rd = sample_channel::<f64, _>(dims.n_d, dims.n, 1.0, &mut rng).unwrap();
        let h_sr = sample_channel::<f64, _>(dims.n_r, dims.n, 1.0, &mut rng).unwrap();
        let y_sd: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let y_rd: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
        let sys = zg_build(&h_sd, &h_rd, &h_sr).unwrap();
        let est = zg_estimate(&sys, &y_sd, &y_rd).unwrap();
        let mut ybar = y_sd.clone();
        ybar.extend_from_slice(&y_rd);
        let rhs = sys.rhs_map.matvec(&ybar);
        let mut resid = sys.gram_total.matvec(&est);
        for (r, b) in resid.iter_mut().zip(&rhs) {
            *r -= *b;
        }
        assert!(norm_sq(&resid).sqrt() <= 1e-8 * norm_sq(&rhs).sqrt().max(1.0));
    }
}
