//! Deep-unfolded iterative detectors.
//!
//! Each network unrolls a fixed number of projected-gradient-style layers.
//! A layer sees the matched-filter outputs of the receive vectors, the
//! current estimates, their images under the per-sample Gram matrices, and a
//! memory vector `v`; it refines the estimates through one hidden rectified
//! layer and a piecewise-linear soft-sign output with a learned half-width.
//! Training is plain stochastic gradient descent with Adam on a hand-derived
//! backward pass ([`backward`]); no autodiff framework is involved.
//!
//! Destination networks estimate both the source word and the relay word,
//! and optionally consume a penalty image `G_pen (x - x_r)` that couples the
//! two — the penalty channel decides the flavor (matched, error-rate-scaled,
//! unit) exactly as for the other joint detectors. The simple flavor drops
//! that input; the relay flavor is a single-hop network.

pub mod adam;
pub mod backward;
pub mod checkpoint;
pub mod forward;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exhaustive::StackedProblem;
use crate::linalg::Mat;
use crate::model::{RealChannel, RealSignal};
use crate::scalar::Scalar;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use forward::{ForwardTrace, InputBatch};
pub use train::{
    train, LossKind, RelayLabeler, TrainConfig, TrainLogRow, TrainOutcome,
};

/// Smallest allowed soft-sign half-width; the post-update clamp keeps `t`
/// at or above this so the activation never degenerates into a hard step.
pub const MIN_SOFT_WIDTH: f64 = 1e-3;

/// Default ratio between the hidden width and the input width.
pub const DEFAULT_HIDDEN_MULT: usize = 4;

/// Default carry-over weight for the inter-layer residual average.
pub const DEFAULT_RESIDUAL_ALPHA: f64 = 0.3;

/// Network flavor: which inputs a layer sees and which outputs it refines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Destination network with the penalty image `G_pen (x - x_r)` as an
    /// input block; the penalty channel is supplied per problem.
    DestPenalized,
    /// Destination network without the penalty block.
    DestSimple,
    /// Single-hop network (used at the relay).
    Relay,
}

impl Variant {
    /// Whether the network tracks a relay-word estimate.
    pub fn has_xr(self) -> bool {
        !matches!(self, Variant::Relay)
    }

    /// Whether the input carries the penalty image block.
    pub fn has_penalty_input(self) -> bool {
        matches!(self, Variant::DestPenalized)
    }

    /// Input rows for a real signal length `x_len`.
    pub fn input_dim(self, x_len: usize) -> usize {
        match self {
            Variant::DestPenalized => 9 * x_len,
            Variant::DestSimple => 8 * x_len,
            Variant::Relay => 4 * x_len,
        }
    }

    /// Memory-vector rows for a real signal length `x_len`.
    pub fn v_dim(self, x_len: usize) -> usize {
        match self {
            Variant::Relay => x_len,
            _ => 2 * x_len,
        }
    }
}

/// Row offsets of the input blocks for one flavor and signal length.
///
/// Destination order: `[hy_sd; hy_rd; v; x; xr; G_sd x; G_rd xr;
/// G_pen (x - xr)]` (the last block only when penalized). Relay order:
/// `[hy; v; x; G x]`.
#[derive(Clone, Copy, Debug)]
pub struct InputLayout {
    pub x_len: usize,
    pub variant: Variant,
}

impl InputLayout {
    pub fn new(variant: Variant, x_len: usize) -> Self {
        InputLayout { x_len, variant }
    }

    pub fn off_hy1(&self) -> usize {
        0
    }

    /// Second matched-filter block (destination flavors only).
    pub fn off_hy2(&self) -> usize {
        self.x_len
    }

    pub fn off_v(&self) -> usize {
        match self.variant {
            Variant::Relay => self.x_len,
            _ => 2 * self.x_len,
        }
    }

    pub fn off_x(&self) -> usize {
        self.off_v() + self.variant.v_dim(self.x_len)
    }

    pub fn off_xr(&self) -> usize {
        debug_assert!(self.variant.has_xr());
        self.off_x() + self.x_len
    }

    /// First Gram image block: `G_sd x` (destination) or `G x` (relay).
    pub fn off_gx(&self) -> usize {
        match self.variant {
            Variant::Relay => self.off_x() + self.x_len,
            _ => self.off_xr() + self.x_len,
        }
    }

    /// Second Gram image block `G_rd xr` (destination flavors only).
    pub fn off_gxr(&self) -> usize {
        debug_assert!(self.variant.has_xr());
        self.off_gx() + self.x_len
    }

    /// Penalty image block `G_pen (x - xr)` (penalized flavor only).
    pub fn off_gpen(&self) -> usize {
        debug_assert!(self.variant.has_penalty_input());
        self.off_gxr() + self.x_len
    }

    pub fn total(&self) -> usize {
        self.variant.input_dim(self.x_len)
    }
}

/// Learned parameters of one unrolled layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerParams<F> {
    /// Hidden map, `hidden x input`.
    pub w1: Mat<F>,
    pub b1: Vec<F>,
    /// Source-estimate head, `x_len x hidden`.
    pub w2: Mat<F>,
    pub b2: Vec<F>,
    /// Relay-estimate head (destination flavors).
    pub wr2: Option<Mat<F>>,
    pub br2: Option<Vec<F>>,
    /// Memory head, `v_dim x hidden`.
    pub w3: Mat<F>,
    pub b3: Vec<F>,
    /// Soft-sign half-width (strictly positive).
    pub t: F,
}

/// Full parameter set of an unfolded network.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkParams<F> {
    pub variant: Variant,
    /// Real signal length `2N` the network was built for.
    pub x_len: usize,
    /// Hidden width shared by all layers.
    pub hidden: usize,
    /// Carry-over weight of the residual average between layers.
    pub residual_alpha: F,
    /// Whether the memory vector is also residual-averaged.
    pub residual_on_v: bool,
    pub layers: Vec<LayerParams<F>>,
}

impl<F: Scalar> NetworkParams<F> {
    /// Fresh network with `N(0, 0.01)` weights, zero biases and half-width
    /// `0.5` in every layer.
    pub fn init<R: Rng + ?Sized>(
        variant: Variant,
        x_len: usize,
        n_layers: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if x_len == 0 || x_len % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "real signal length must be positive and even, got {x_len}"
            )));
        }
        if n_layers == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "network needs at least one layer and one hidden unit, got {n_layers} and {hidden}"
            )));
        }
        let input = variant.input_dim(x_len);
        let v_dim = variant.v_dim(x_len);
        let std = F::from_f64(0.1);
        let mut gauss_mat = |r: usize, c: usize, rng: &mut R| {
            Mat::from_fn(r, c, |_, _| std * crate::model::sample_standard_normal::<F, R>(rng))
        };
        let layers = (0..n_layers)
            .map(|_| {
                let w1 = gauss_mat(hidden, input, rng);
                let w2 = gauss_mat(x_len, hidden, rng);
                let (wr2, br2) = if variant.has_xr() {
                    (Some(gauss_mat(x_len, hidden, rng)), Some(vec![F::zero(); x_len]))
                } else {
                    (None, None)
                };
                let w3 = gauss_mat(v_dim, hidden, rng);
                LayerParams {
                    w1,
                    b1: vec![F::zero(); hidden],
                    w2,
                    b2: vec![F::zero(); x_len],
                    wr2,
                    br2,
                    w3,
                    b3: vec![F::zero(); v_dim],
                    t: F::from_f64(0.5),
                }
            })
            .collect();
        Ok(NetworkParams {
            variant,
            x_len,
            hidden,
            residual_alpha: F::from_f64(DEFAULT_RESIDUAL_ALPHA),
            residual_on_v: true,
            layers,
        })
    }

    /// Fresh network with the default hidden width (four times the input).
    pub fn init_default_hidden<R: Rng + ?Sized>(
        variant: Variant,
        x_len: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = DEFAULT_HIDDEN_MULT * variant.input_dim(x_len);
        Self::init(variant, x_len, n_layers, hidden, rng)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layout(&self) -> InputLayout {
        InputLayout::new(self.variant, self.x_len)
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let mut n = l.w1.rows() * l.w1.cols()
                    + l.b1.len()
                    + l.w2.rows() * l.w2.cols()
                    + l.b2.len()
                    + l.w3.rows() * l.w3.cols()
                    + l.b3.len()
                    + 1;
                if let Some(w) = &l.wr2 {
                    n += w.rows() * w.cols();
                }
                if let Some(b) = &l.br2 {
                    n += b.len();
                }
                n
            })
            .sum()
    }

    /// Copies every parameter into one flat vector, layer by layer in the
    /// order `w1, b1, w2, b2, wr2?, br2?, w3, b3, t`.
    pub fn to_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w1.data());
            out.extend_from_slice(&l.b1);
            out.extend_from_slice(l.w2.data());
            out.extend_from_slice(&l.b2);
            if let Some(w) = &l.wr2 {
                out.extend_from_slice(w.data());
            }
            if let Some(b) = &l.br2 {
                out.extend_from_slice(b);
            }
            out.extend_from_slice(l.w3.data());
            out.extend_from_slice(&l.b3);
            out.push(l.t);
        }
        out
    }

    /// Writes a flat vector (same layout as [`Self::to_flat`]) back into the
    /// parameters, clamping each half-width away from zero.
    pub fn assign_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "flat parameter vector has {} entries, network has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut k = 0;
        let mut take = |dst: &mut [F], k: &mut usize| {
            dst.copy_from_slice(&flat[*k..*k + dst.len()]);
            *k += dst.len();
        };
        for l in self.layers.iter_mut() {
            take(l.w1.data_mut(), &mut k);
            take(&mut l.b1, &mut k);
            take(l.w2.data_mut(), &mut k);
            take(&mut l.b2, &mut k);
            if let Some(w) = l.wr2.as_mut() {
                take(w.data_mut(), &mut k);
            }
            if let Some(b) = l.br2.as_mut() {
                take(b, &mut k);
            }
            take(l.w3.data_mut(), &mut k);
            take(&mut l.b3, &mut k);
            l.t = flat[k].abs().max(F::from_f64(MIN_SOFT_WIDTH));
            k += 1;
        }
        Ok(())
    }
}

/// Piecewise-linear soft sign with half-width `t > 0`: `-1` below `-t`,
/// `x / t` inside, `+1` above `t`.
#[inline]
pub fn soft_sign<F: Scalar>(x: F, t: F) -> F {
    (-F::one()) + relu(x + t) / t - relu(x - t) / t
}

#[inline]
pub(crate) fn relu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        F::zero()
    }
}

/// Heaviside step with `step(0) = 0`, matching the left-limit convention the
/// backward pass uses at the kinks.
#[inline]
pub(crate) fn step<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        F::zero()
    }
}

/// Runs a trained destination network on one stacked observation. The
/// problem's effective source-relay channel feeds the penalty block (ignored
/// by the simple flavor).
pub fn detect<F: Scalar>(params: &NetworkParams<F>, prob: &StackedProblem<F>) -> Result<RealSignal> {
    if params.variant == Variant::Relay {
        return Err(Error::InvalidArgument(
            "single-hop network cannot detect a two-hop observation".into(),
        ));
    }
    let batch = InputBatch::from_problems(params.variant, std::slice::from_ref(prob))?;
    let trace = forward::forward(params, &batch)?;
    Ok(RealSignal::from_soft(&trace.final_x().col(0)))
}

/// Runs a trained single-hop network on one relay observation.
pub fn detect_relay<F: Scalar>(
    params: &NetworkParams<F>,
    y: &[F],
    h: &RealChannel<F>,
) -> Result<RealSignal> {
    if params.variant != Variant::Relay {
        return Err(Error::InvalidArgument(
            "two-hop network cannot detect a single-hop observation".into(),
        ));
    }
    let batch = InputBatch::from_single_hop(std::slice::from_ref(&(y.to_vec(), h.clone())))?;
    let trace = forward::forward(params, &batch)?;
    Ok(RealSignal::from_soft(&trace.final_x().col(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_offsets_tile_the_input() {
        for &(variant, xl) in &[
            (Variant::DestPenalized, 4usize),
            (Variant::DestSimple, 4),
            (Variant::Relay, 4),
            (Variant::DestPenalized, 8),
        ] {
            let lay = InputLayout::new(variant, xl);
            match variant {
                Variant::DestPenalized => {
                    assert_eq!(lay.off_hy1(), 0);
                    assert_eq!(lay.off_hy2(), xl);
                    assert_eq!(lay.off_v(), 2 * xl);
                    assert_eq!(lay.off_x(), 4 * xl);
                    assert_eq!(lay.off_xr(), 5 * xl);
                    assert_eq!(lay.off_gx(), 6 * xl);
                    assert_eq!(lay.off_gxr(), 7 * xl);
                    assert_eq!(lay.off_gpen(), 8 * xl);
                    assert_eq!(lay.total(), 9 * xl);
                }
                Variant::DestSimple => {
                    assert_eq!(lay.off_gxr(), 7 * xl);
                    assert_eq!(lay.total(), 8 * xl);
                }
                Variant::Relay => {
                    assert_eq!(lay.off_v(), xl);
                    assert_eq!(lay.off_x(), 2 * xl);
                    assert_eq!(lay.off_gx(), 3 * xl);
                    assert_eq!(lay.total(), 4 * xl);
                }
            }
        }
    }

    #[test]
    fn soft_sign_regions_and_extremes() {
        let t = 0.5f64;
        assert_eq!(soft_sign(-2.0, t), -1.0);
        assert_eq!(soft_sign(2.0, t), 1.0);
        assert!((soft_sign(0.25, t) - 0.5).abs() < 1e-15);
        assert!((soft_sign(-0.25, t) + 0.5).abs() < 1e-15);
        assert_eq!(soft_sign(0.0, t), 0.0);
        // Exactly at the kinks the function is continuous.
        assert!((soft_sign(t, t) - 1.0).abs() < 1e-15);
        assert!((soft_sign(-t, t) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_round_trip_preserves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(127);
        for variant in [Variant::DestPenalized, Variant::DestSimple, Variant::Relay] {
            let p = NetworkParams::<f64>::init(variant, 4, 3, 10, &mut rng).unwrap();
            let flat = p.to_flat();
            assert_eq!(flat.len(), p.n_params());
            let mut q = p.clone();
            q.assign_flat(&flat).unwrap();
            assert_eq!(p.to_flat(), q.to_flat());
        }
    }

    #[test]
    fn assign_flat_clamps_half_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(131);
        let mut p = NetworkParams::<f64>::init(Variant::Relay, 2, 1, 4, &mut rng).unwrap();
        let mut flat = p.to_flat();
        let last = flat.len() - 1;
        flat[last] = -2.0;
        p.assign_flat(&flat).unwrap();
        assert_eq!(p.layers[0].t, 2.0, "negative widths flip to their magnitude");
        flat[last] = 1e-9;
        p.assign_flat(&flat).unwrap();
        assert_eq!(p.layers[0].t, MIN_SOFT_WIDTH);
    }

    #[test]
    fn init_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(137);
        assert!(NetworkParams::<f64>::init(Variant::Relay, 3, 2, 4, &mut rng).is_err());
        assert!(NetworkParams::<f64>::init(Variant::Relay, 0, 2, 4, &mut rng).is_err());
        assert!(NetworkParams::<f64>::init(Variant::Relay, 4, 0, 4, &mut rng).is_err());
        assert!(NetworkParams::<f64>::init(Variant::Relay, 4, 2, 0, &mut rng).is_err());
    }
}
