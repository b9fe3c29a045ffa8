//! Batched forward pass of the unfolded networks.
//!
//! A batch is laid out column-wise: every matrix here has one column per
//! sample, so each layer is two or three dense `weights x batch` products
//! plus elementwise activations. Per-sample Gram matrices (each sample can
//! carry its own channel realization) are applied column by column when the
//! layer input is assembled.

use crate::error::{Error, Result};
use crate::exhaustive::StackedProblem;
use crate::linalg::Mat;
use crate::model::RealChannel;
use crate::scalar::Scalar;

use super::{relu, soft_sign, NetworkParams, Variant};

/// Precomputed per-batch constants: matched-filter images and per-sample
/// Gram matrices.
#[derive(Clone, Debug)]
pub struct InputBatch<F> {
    pub variant: Variant,
    pub x_len: usize,
    pub batch: usize,
    /// `H_sd^T y_sd` per column (destination) or `H^T y` (relay).
    pub hy1: Mat<F>,
    /// `H_rd^T y_rd` per column (destination flavors only).
    pub hy2: Option<Mat<F>>,
    /// Per-sample `H_sd^T H_sd` (destination) or `H^T H` (relay).
    pub g1: Vec<Mat<F>>,
    /// Per-sample `H_rd^T H_rd` (destination flavors only).
    pub g2: Option<Vec<Mat<F>>>,
    /// Per-sample penalty Grams (penalized flavor only).
    pub gpen: Option<Vec<Mat<F>>>,
}

impl<F: Scalar> InputBatch<F> {
    /// Builds a destination batch from stacked observations; each problem's
    /// effective source-relay channel feeds the penalty Gram (ignored for
    /// the simple flavor).
    pub fn from_problems(variant: Variant, probs: &[StackedProblem<F>]) -> Result<Self> {
        if variant == Variant::Relay {
            return Err(Error::InvalidArgument(
                "relay networks take single-hop batches".into(),
            ));
        }
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let x_len = probs[0].x_len();
        let b = probs.len();
        let mut hy1 = Mat::zeros(x_len, b);
        let mut hy2 = Mat::zeros(x_len, b);
        let mut g1 = Vec::with_capacity(b);
        let mut g2 = Vec::with_capacity(b);
        let mut gpen = Vec::with_capacity(if variant.has_penalty_input() { b } else { 0 });
        for (j, p) in probs.iter().enumerate() {
            if p.x_len() != x_len {
                return Err(Error::DimensionMismatch(format!(
                    "batch mixes signal lengths {} and {}",
                    x_len,
                    p.x_len()
                )));
            }
            hy1.set_col(j, &p.h_sd.m.tr_matvec(&p.y_sd));
            hy2.set_col(j, &p.h_rd.m.tr_matvec(&p.y_rd));
            g1.push(p.h_sd.m.gram());
            g2.push(p.h_rd.m.gram());
            if variant.has_penalty_input() {
                gpen.push(p.h_sr_eff.m.gram());
            }
        }
        Ok(InputBatch {
            variant,
            x_len,
            batch: b,
            hy1,
            hy2: Some(hy2),
            g1,
            g2: Some(g2),
            gpen: if variant.has_penalty_input() { Some(gpen) } else { None },
        })
    }

    /// Builds a relay batch from single-hop observations.
    pub fn from_single_hop(obs: &[(Vec<F>, RealChannel<F>)]) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let x_len = obs[0].1.cols();
        let b = obs.len();
        let mut hy1 = Mat::zeros(x_len, b);
        let mut g1 = Vec::with_capacity(b);
        for (j, (y, h)) in obs.iter().enumerate() {
            if h.cols() != x_len || y.len() != h.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "single-hop batch entry {j} has inconsistent shapes"
                )));
            }
            hy1.set_col(j, &h.m.tr_matvec(y));
            g1.push(h.m.gram());
        }
        Ok(InputBatch { variant: Variant::Relay, x_len, batch: b, hy1, hy2: None, g1, g2: None, gpen: None })
    }
}

/// Everything one layer computed, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace<F> {
    /// Assembled input block, `input x batch`.
    pub i: Mat<F>,
    /// Hidden pre-activation.
    pub a: Mat<F>,
    /// Hidden activation `relu(a)`.
    pub u: Mat<F>,
    /// Source-head pre-activation.
    pub p: Mat<F>,
    /// Relay-head pre-activation (destination flavors).
    pub q: Option<Mat<F>>,
    /// Source estimate after the residual average.
    pub x: Mat<F>,
    /// Relay estimate after the residual average.
    pub xr: Option<Mat<F>>,
    /// Memory vector handed to the next layer.
    pub v: Mat<F>,
}

/// Full forward trace: one [`LayerTrace`] per unrolled layer.
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    pub layers: Vec<LayerTrace<F>>,
}

impl<F: Scalar> ForwardTrace<F> {
    /// Final source estimate (soft values in `[-1, 1]`).
    pub fn final_x(&self) -> &Mat<F> {
        &self.layers.last().expect("trace has at least one layer").x
    }

    /// Smallest distance of any hidden or head pre-activation from its
    /// activation kink. Used by gradient checks to reject configurations
    /// where a finite-difference probe would step across a kink.
    pub fn min_kink_margin(&self, params: &NetworkParams<F>) -> F {
        let mut m = F::infinity();
        for (lt, lp) in self.layers.iter().zip(&params.layers) {
            for &a in lt.a.data() {
                m = m.min(a.abs());
            }
            for &p in lt.p.data() {
                m = m.min((p + lp.t).abs()).min((p - lp.t).abs());
            }
            if let Some(q) = &lt.q {
                for &qv in q.data() {
                    m = m.min((qv + lp.t).abs()).min((qv - lp.t).abs());
                }
            }
        }
        m
    }
}

/// Applies each per-sample Gram to the matching column of `src` and writes
/// the images into rows `dst_off..dst_off + x_len` of `dst`. When `src2` is
/// given the image of `src - src2` is taken instead.
fn apply_grams_into<F: Scalar>(
    dst: &mut Mat<F>,
    dst_off: usize,
    grams: &[Mat<F>],
    src: &Mat<F>,
    src2: Option<&Mat<F>>,
) {
    let x_len = grams[0].rows();
    let b = src.cols();
    for j in 0..b {
        let g = &grams[j];
        for r in 0..x_len {
            let mut acc = F::zero();
            let grow = g.row(r);
            for c in 0..x_len {
                let s = match src2 {
                    Some(s2) => src.at(c, j) - s2.at(c, j),
                    None => src.at(c, j),
                };
                acc += grow[c] * s;
            }
            dst.set(dst_off + r, j, acc);
        }
    }
}

/// Copies `src` into rows `dst_off..` of `dst`.
fn copy_rows_into<F: Scalar>(dst: &mut Mat<F>, dst_off: usize, src: &Mat<F>) {
    for r in 0..src.rows() {
        let b = src.cols();
        let drow = &mut dst.row_mut(dst_off + r)[..b];
        drow.copy_from_slice(src.row(r));
    }
}

/// Elementwise soft sign of a whole matrix.
fn soft_sign_mat<F: Scalar>(m: &Mat<F>, t: F) -> Mat<F> {
    let mut out = m.clone();
    for v in out.data_mut() {
        *v = soft_sign(*v, t);
    }
    out
}

/// Runs the unrolled network over a batch and keeps the full trace.
pub fn forward<F: Scalar>(
    params: &NetworkParams<F>,
    batch: &InputBatch<F>,
) -> Result<ForwardTrace<F>> {
    if params.variant != batch.variant {
        return Err(Error::InvalidArgument(format!(
            "network flavor {:?} fed a {:?} batch",
            params.variant, batch.variant
        )));
    }
    if params.x_len != batch.x_len {
        return Err(Error::DimensionMismatch(format!(
            "network built for signal length {}, batch carries {}",
            params.x_len, batch.x_len
        )));
    }
    let lay = params.layout();
    let b = batch.batch;
    let x_len = params.x_len;
    let v_dim = params.variant.v_dim(x_len);
    let alpha = params.residual_alpha;
    let keep = F::one() - alpha;

    let mut x_prev = Mat::zeros(x_len, b);
    let mut xr_prev =
        if params.variant.has_xr() { Some(Mat::zeros(x_len, b)) } else { None };
    let mut v_prev = Mat::zeros(v_dim, b);
    let mut layers = Vec::with_capacity(params.n_layers());

    for lp in &params.layers {
        // Assemble the input block.
        let mut i = Mat::zeros(lay.total(), b);
        copy_rows_into(&mut i, lay.off_hy1(), &batch.hy1);
        if let Some(hy2) = &batch.hy2 {
            copy_rows_into(&mut i, lay.off_hy2(), hy2);
        }
        copy_rows_into(&mut i, lay.off_v(), &v_prev);
        copy_rows_into(&mut i, lay.off_x(), &x_prev);
        if let Some(xr) = &xr_prev {
            copy_rows_into(&mut i, lay.off_xr(), xr);
        }
        apply_grams_into(&mut i, lay.off_gx(), &batch.g1, &x_prev, None);
        if let (Some(g2), Some(xr)) = (&batch.g2, &xr_prev) {
            apply_grams_into(&mut i, lay.off_gxr(), g2, xr, None);
        }
        if let (Some(gp), Some(xr)) = (&batch.gpen, &xr_prev) {
            apply_grams_into(&mut i, lay.off_gpen(), gp, &x_prev, Some(xr));
        }

        // Hidden layer.
        let mut a = lp.w1.matmul(&i);
        a.add_row_broadcast(&lp.b1);
        let mut u = a.clone();
        for v in u.data_mut() {
            *v = relu(*v);
        }

        // Source head with residual average.
        let mut p = lp.w2.matmul(&u);
        p.add_row_broadcast(&lp.b2);
        let mut x = soft_sign_mat(&p, lp.t);
        x.scale(keep);
        x.add_scaled(&x_prev, alpha);

        // Relay head.
        let (q, xr) = if let (Some(wr2), Some(br2), Some(xrp)) =
            (&lp.wr2, &lp.br2, &xr_prev)
        {
            let mut q = wr2.matmul(&u);
            q.add_row_broadcast(br2);
            let mut xr = soft_sign_mat(&q, lp.t);
            xr.scale(keep);
            xr.add_scaled(xrp, alpha);
            (Some(q), Some(xr))
        } else {
            (None, None)
        };

        // Memory head.
        let mut v = lp.w3.matmul(&u);
        v.add_row_broadcast(&lp.b3);
        if params.residual_on_v {
            v.scale(keep);
            v.add_scaled(&v_prev, alpha);
        }

        x_prev = x.clone();
        xr_prev = xr.clone();
        v_prev = v.clone();
        layers.push(LayerTrace { i, a, u, p, q, x, xr, v });
    }

    Ok(ForwardTrace { layers })
}
