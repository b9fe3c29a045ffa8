//! Hand-derived backward pass and training loss.
//!
//! The loss is a layer-weighted, per-sample-normalized squared error,
//! averaged over the batch:
//!
//! ```text
//! L = (1/B) sum_b sum_k ln(1+k) ( ||x_k - x*||^2 + ||xr_k - xr*||^2 ) / norm_b
//! ```
//!
//! (the relay-word term only for joint losses on networks that track one).
//! Gradients flow back through three coupled paths: the residual average
//! between consecutive layers, the estimate blocks of the next layer's input,
//! and the per-sample Gram images of those estimates. Activation kinks use
//! the left-limit convention (`step(0) = 0`), which is also what the forward
//! pass's `relu` implies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

use super::forward::{ForwardTrace, InputBatch};
use super::{relu, step, NetworkParams};

/// Which estimate errors enter the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Source and relay estimates both contribute.
    Joint,
    /// Only the source estimate contributes (the relay estimate still trains
    /// indirectly through the input couplings).
    SourceOnly,
}

/// Targets and per-sample normalizers for one batch.
pub struct LossSpec<'a, F> {
    /// True source words, `x_len x batch`, entries in `{-1, +1}`.
    pub x_true: &'a Mat<F>,
    /// True relay words (what the relay actually forwarded).
    pub xr_true: Option<&'a Mat<F>>,
    /// Per-sample normalizers, strictly positive.
    pub norms: &'a [F],
    pub kind: LossKind,
}

/// Layer weight `ln(1 + k)` for 1-indexed layer `k`.
#[inline]
fn layer_weight<F: Scalar>(k: usize) -> F {
    F::from_f64((1.0 + k as f64).ln())
}

/// Soft-sign derivative with respect to its input.
#[inline]
fn soft_sign_din<F: Scalar>(x: F, t: F) -> F {
    (step(x + t) - step(x - t)) / t
}

/// Soft-sign derivative with respect to the half-width.
#[inline]
fn soft_sign_dt<F: Scalar>(x: F, t: F) -> F {
    (step(x + t) + step(x - t)) / t - (relu(x + t) - relu(x - t)) / (t * t)
}

/// Adds `sign * G_j^T d[block]` into `carry` for every sample column, where
/// the Grams are symmetric so `G^T = G`.
fn accumulate_gram_images<F: Scalar>(
    carry: &mut Mat<F>,
    grams: &[Mat<F>],
    d: &Mat<F>,
    off: usize,
    sign: F,
) {
    let x_len = grams[0].rows();
    for j in 0..carry.cols() {
        let g = &grams[j];
        for r in 0..x_len {
            let grow = g.row(r);
            let mut acc = F::zero();
            for c in 0..x_len {
                acc += grow[c] * d.at(off + c, j);
            }
            carry.add_at(r, j, sign * acc);
        }
    }
}

/// Adds rows `off..off + carry.rows()` of `d` into `carry`.
fn accumulate_rows<F: Scalar>(carry: &mut Mat<F>, d: &Mat<F>, off: usize) {
    for r in 0..carry.rows() {
        for j in 0..carry.cols() {
            carry.add_at(r, j, d.at(off + r, j));
        }
    }
}

/// Computes the loss and its gradient with respect to every parameter.
///
/// The returned parameter struct has the same shapes as `params`; its `t`
/// fields hold the half-width gradients.
pub fn backward<F: Scalar>(
    params: &NetworkParams<F>,
    batch: &InputBatch<F>,
    trace: &ForwardTrace<F>,
    spec: &LossSpec<'_, F>,
) -> Result<(F, NetworkParams<F>)> {
    let x_len = params.x_len;
    let b = batch.batch;
    let n_layers = params.n_layers();
    if trace.layers.len() != n_layers {
        return Err(Error::DimensionMismatch(format!(
            "trace has {} layers, network has {}",
            trace.layers.len(),
            n_layers
        )));
    }
    if spec.x_true.rows() != x_len || spec.x_true.cols() != b || spec.norms.len() != b {
        return Err(Error::DimensionMismatch(
            "loss targets do not match the batch shape".into(),
        ));
    }
    let joint_xr = spec.kind == LossKind::Joint && params.variant.has_xr();
    if joint_xr {
        match spec.xr_true {
            Some(m) if m.rows() == x_len && m.cols() == b => {}
            _ => {
                return Err(Error::DimensionMismatch(
                    "joint loss needs relay targets matching the batch shape".into(),
                ))
            }
        }
    }
    for (j, nb) in spec.norms.iter().enumerate() {
        if !(*nb > F::zero()) {
            return Err(Error::InvalidArgument(format!(
                "normalizer {j} is not positive: {nb}"
            )));
        }
    }

    let lay = params.layout();
    let alpha = params.residual_alpha;
    let keep = F::one() - alpha;
    let inv_b = F::one() / F::from_f64(b as f64);

    let mut grads = params.zeros_like();
    let mut loss = F::zero();

    // Carried gradients flowing into the previous layer's outputs.
    let mut carry_x = Mat::zeros(x_len, b);
    let mut carry_xr = if params.variant.has_xr() { Some(Mat::zeros(x_len, b)) } else { None };
    let mut carry_v = Mat::zeros(params.variant.v_dim(x_len), b);

    for k in (0..n_layers).rev() {
        let lt = &trace.layers[k];
        let lp = &params.layers[k];
        let gl = &mut grads.layers[k];
        let wk = layer_weight::<F>(k + 1);

        // Total gradient at this layer's outputs: direct loss term plus what
        // later layers carried back.
        let mut gx = carry_x;
        for j in 0..b {
            let scale = F::from_f64(2.0) * wk * inv_b / spec.norms[j];
            for r in 0..x_len {
                let e = lt.x.at(r, j) - spec.x_true.at(r, j);
                loss += wk * inv_b * e * e / spec.norms[j];
                gx.add_at(r, j, scale * e);
            }
        }
        let mut gxr = carry_xr;
        if joint_xr {
            let xr_true = spec.xr_true.unwrap();
            let xr = lt.xr.as_ref().expect("network tracks a relay estimate");
            let gxr = gxr.as_mut().unwrap();
            for j in 0..b {
                let scale = F::from_f64(2.0) * wk * inv_b / spec.norms[j];
                for r in 0..x_len {
                    let e = xr.at(r, j) - xr_true.at(r, j);
                    loss += wk * inv_b * e * e / spec.norms[j];
                    gxr.add_at(r, j, scale * e);
                }
            }
        }
        let gv = carry_v;

        // Residual average: split into the head path and the carry path.
        let mut next_carry_x = gx.clone();
        next_carry_x.scale(alpha);
        let mut dp = gx;
        dp.scale(keep);
        let mut gt = F::zero();
        for j in 0..b {
            for r in 0..x_len {
                let pre = lt.p.at(r, j);
                gt += dp.at(r, j) * soft_sign_dt(pre, lp.t);
                dp.set(r, j, dp.at(r, j) * soft_sign_din(pre, lp.t));
            }
        }

        let (mut next_carry_xr, dq) = match (gxr, &lt.q) {
            (Some(gxr), Some(q)) => {
                let mut carry = gxr.clone();
                carry.scale(alpha);
                let mut dq = gxr;
                dq.scale(keep);
                for j in 0..b {
                    for r in 0..x_len {
                        let pre = q.at(r, j);
                        gt += dq.at(r, j) * soft_sign_dt(pre, lp.t);
                        dq.set(r, j, dq.at(r, j) * soft_sign_din(pre, lp.t));
                    }
                }
                (Some(carry), Some(dq))
            }
            (Some(gxr), None) => (Some(gxr), None),
            (None, _) => (None, None),
        };
        gl.t = gt;

        let (next_carry_v, dw) = if params.residual_on_v {
            let mut carry = gv.clone();
            carry.scale(alpha);
            let mut dw = gv;
            dw.scale(keep);
            (carry, dw)
        } else {
            (Mat::zeros(gv.rows(), b), gv)
        };

        // Head parameter gradients and the combined hidden gradient.
        gl.w2.add_scaled(&dp.matmul_nt(&lt.u), F::one());
        for (dst, s) in gl.b2.iter_mut().zip(dp.row_sums()) {
            *dst += s;
        }
        let mut du = lp.w2.matmul_tn(&dp);
        if let (Some(dq), Some(wr2)) = (&dq, &lp.wr2) {
            let gwr2 = gl.wr2.as_mut().expect("gradient shapes mirror the parameters");
            gwr2.add_scaled(&dq.matmul_nt(&lt.u), F::one());
            for (dst, s) in gl.br2.as_mut().unwrap().iter_mut().zip(dq.row_sums()) {
                *dst += s;
            }
            du.add_scaled(&wr2.matmul_tn(dq), F::one());
        }
        gl.w3.add_scaled(&dw.matmul_nt(&lt.u), F::one());
        for (dst, s) in gl.b3.iter_mut().zip(dw.row_sums()) {
            *dst += s;
        }
        du.add_scaled(&lp.w3.matmul_tn(&dw), F::one());

        // Through the rectifier into the hidden pre-activation.
        let mut da = du;
        for (dv, &av) in da.data_mut().iter_mut().zip(lt.a.data()) {
            *dv = *dv * step(av);
        }
        gl.w1.add_scaled(&da.matmul_nt(&lt.i), F::one());
        for (dst, s) in gl.b1.iter_mut().zip(da.row_sums()) {
            *dst += s;
        }

        // Into the previous layer's outputs through the input blocks.
        if k > 0 {
            let di = lp.w1.matmul_tn(&da);
            accumulate_rows(&mut next_carry_x, &di, lay.off_x());
            accumulate_gram_images(&mut next_carry_x, &batch.g1, &di, lay.off_gx(), F::one());
            if let Some(carry_xr) = next_carry_xr.as_mut() {
                accumulate_rows(carry_xr, &di, lay.off_xr());
                if let Some(g2) = &batch.g2 {
                    accumulate_gram_images(carry_xr, g2, &di, lay.off_gxr(), F::one());
                }
                if let Some(gp) = &batch.gpen {
                    accumulate_gram_images(&mut next_carry_x, gp, &di, lay.off_gpen(), F::one());
                    accumulate_gram_images(carry_xr, gp, &di, lay.off_gpen(), -F::one());
                }
            }
            let mut ncv = next_carry_v;
            accumulate_rows(&mut ncv, &di, lay.off_v());
            carry_v = ncv;
        } else {
            carry_v = next_carry_v;
        }
        carry_x = next_carry_x;
        carry_xr = next_carry_xr;
    }

    Ok((loss, grads))
}

impl<F: Scalar> NetworkParams<F> {
    /// Same shapes as `self`, every entry zero. Used as a gradient container.
    pub fn zeros_like(&self) -> NetworkParams<F> {
        let mut out = self.clone();
        for l in out.layers.iter_mut() {
            for v in l.w1.data_mut() {
                *v = F::zero();
            }
            l.b1.iter_mut().for_each(|v| *v = F::zero());
            for v in l.w2.data_mut() {
                *v = F::zero();
            }
            l.b2.iter_mut().for_each(|v| *v = F::zero());
            if let Some(w) = l.wr2.as_mut() {
                for v in w.data_mut() {
                    *v = F::zero();
                }
            }
            if let Some(bv) = l.br2.as_mut() {
                bv.iter_mut().for_each(|v| *v = F::zero());
            }
            for v in l.w3.data_mut() {
                *v = F::zero();
            }
            l.b3.iter_mut().for_each(|v| *v = F::zero());
            l.t = F::zero();
        }
        out
    }
}
