//! Training loop for the unfolded detectors.
//!
//! Every iteration draws a fresh batch: per sample an SNR uniform in the
//! configured range, fresh channels, a fresh word, the relay's actual
//! decision on its own noisy observation (produced by a [`RelayLabeler`]),
//! and the destination observations built from that decision. The loss is
//! normalized per sample by the error of the matching linear receiver, so
//! easy and hard draws contribute comparably. A held-out evaluation runs
//! every `eval_every` iterations (and at the end); whenever it improves, the
//! parameters are snapshotted — optionally straight to a checkpoint file —
//! so the best-seen network is what the caller gets back.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exhaustive::StackedProblem;
use crate::linalg::{norm_sq, Mat};
use crate::linear::{zf_estimate, zg_build, zg_estimate};
use crate::model::{
    error_scaled_channel, sample_channel, snr_to_sigma2, sr_link_snr, transmit,
    two_level_error_rate, RealChannel, RealSignal, RelayRealization, SystemDims,
};
use crate::scalar::Scalar;

use super::adam::{Adam, AdamConfig};
use super::backward::{backward, LossKind, LossSpec};
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::forward::{forward, InputBatch};
use super::{NetworkParams, Variant};

/// Smallest allowed per-sample loss normalizer.
pub const NORMALIZER_FLOOR: f64 = 1e-9;

/// Stream-offset constant for the evaluation RNG (golden-ratio bits, same
/// trick as hash mixing) so training and evaluation draws never collide.
const EVAL_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// How the relay decides and what the destination knows about it.
///
/// Implemented by the simulation harness for each relay detector; kept as a
/// trait here so training does not depend on the harness.
pub trait RelayLabeler<F: Scalar> {
    /// The word the relay forwards for one observation.
    fn label(&self, y_sr: &[F], h_sr: &RealChannel<F>) -> Result<RealSignal>;
    /// Effective source-relay channel a destination-side penalty should use.
    fn effective_channel(&self, h_sr: &RealChannel<F>) -> Result<RealChannel<F>>;
    /// Diversity order of the relay's detector (drives the two-level error
    /// rate of the scaled penalty).
    fn diversity_order(&self, dims: &SystemDims) -> u32;
}

/// Which penalty channel feeds the network inputs and the loss normalizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenaltyFeed {
    /// The labeler's effective channel (full knowledge).
    Matched,
    /// Scaled identity from the two-level relay error rate.
    ErrorRateScaled,
    /// Plain identity (channel-agnostic).
    Unit,
}

/// Everything a training run needs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dims: SystemDims,
    pub variant: Variant,
    pub penalty: PenaltyFeed,
    pub n_layers: usize,
    /// Hidden width; `None` selects four times the input width.
    pub hidden: Option<usize>,
    pub iterations: u64,
    pub batch: usize,
    pub snr_db_lo: f64,
    pub snr_db_hi: f64,
    /// Per-entry variance of the source-relay channel.
    pub sigma2_sr: f64,
    pub eval_every: u64,
    /// Held-out transmissions per evaluation.
    pub eval_symbols: usize,
    pub eval_snr_db: f64,
    pub loss: LossKind,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument(
                "training needs at least one iteration and one sample per batch".into(),
            ));
        }
        if self.snr_db_lo > self.snr_db_hi {
            return Err(Error::InvalidArgument(format!(
                "empty SNR range [{}, {}]",
                self.snr_db_lo, self.snr_db_hi
            )));
        }
        if self.sigma2_sr <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "source-relay channel variance must be positive, got {}",
                self.sigma2_sr
            )));
        }
        if self.eval_every == 0 || self.eval_symbols == 0 {
            return Err(Error::InvalidArgument(
                "evaluation cadence and size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub loss: f64,
    /// Held-out bit error rate, present on evaluation iterations.
    pub eval_ber: Option<f64>,
    /// Whether this evaluation improved on the best seen so far.
    pub improved: bool,
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    /// Best-evaluated snapshot (falls back to the final parameters when no
    /// evaluation ever ran).
    pub best: Checkpoint<F>,
    /// Parameters after the last iteration.
    pub final_params: NetworkParams<F>,
    pub log: Vec<TrainLogRow>,
}

/// One destination training sample.
struct DestSample<F> {
    prob: StackedProblem<F>,
    x: RealSignal,
    x_r: RealSignal,
    norm: F,
}

/// Draws one destination sample: channels, word, relay decision, destination
/// observations, penalty channel, and the linear-receiver normalizer.
fn draw_dest_sample<F: Scalar, L: RelayLabeler<F> + ?Sized>(
    cfg: &TrainConfig,
    labeler: &L,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DestSample<F>> {
    let dims = &cfg.dims;
    let sigma2 = snr_to_sigma2::<F>(F::from_f64(snr_db), dims.n);
    let real = RelayRealization::sample(dims, sigma2, F::from_f64(cfg.sigma2_sr), rng)?;
    let x = RealSignal::random(dims.x_len(), rng);
    let y_sr = transmit(&real.h_sr, &x, sigma2, rng)?;
    let x_r = labeler.label(&y_sr, &real.h_sr)?;
    let y_sd = transmit(&real.h_sd, &x, sigma2, rng)?;
    let y_rd = transmit(&real.h_rd, &x_r, sigma2, rng)?;
    let h_pen = match cfg.penalty {
        PenaltyFeed::Matched => labeler.effective_channel(&real.h_sr)?,
        PenaltyFeed::ErrorRateScaled => {
            let gamma = sr_link_snr(dims.n, F::from_f64(cfg.sigma2_sr), sigma2);
            let p_e = two_level_error_rate(gamma, labeler.diversity_order(dims));
            error_scaled_channel(dims.x_len(), sigma2, p_e)?
        }
        PenaltyFeed::Unit => RealChannel::identity(dims.x_len()),
    };
    let prob = StackedProblem::new(y_sd, y_rd, real.h_sd, real.h_rd, h_pen, sigma2)?;

    // Normalizer: squared error of the matching linear receiver on the
    // stacked truth.
    let sys = zg_build(&prob.h_sd, &prob.h_rd, &prob.h_sr_eff)?;
    let est = zg_estimate(&sys, &prob.y_sd, &prob.y_rd)?;
    let mut truth = x.to_scalars::<F>();
    truth.extend(x_r.to_scalars::<F>());
    let mut err = F::zero();
    for (e, t) in est.iter().zip(&truth) {
        let d = *e - *t;
        err += d * d;
    }
    let norm = err.max(F::from_f64(NORMALIZER_FLOOR));
    Ok(DestSample { prob, x, x_r, norm })
}

/// One single-hop training sample.
struct RelaySample<F> {
    y: Vec<F>,
    h: RealChannel<F>,
    x: RealSignal,
    norm: F,
}

fn draw_relay_sample<F: Scalar>(
    cfg: &TrainConfig,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RelaySample<F>> {
    let dims = &cfg.dims;
    let sigma2 = snr_to_sigma2::<F>(F::from_f64(snr_db), dims.n);
    let h = sample_channel(dims.n_r, dims.n, F::from_f64(cfg.sigma2_sr), rng)?;
    let x = RealSignal::random(dims.x_len(), rng);
    let y = transmit(&h, &x, sigma2, rng)?;
    let est = zf_estimate(&y, &h)?;
    let err = norm_sq(&crate::linalg::vec_sub(&est, &x.to_scalars::<F>()));
    let norm = err.max(F::from_f64(NORMALIZER_FLOOR));
    Ok(RelaySample { y, h, x, norm })
}

fn words_to_mat<F: Scalar>(words: &[RealSignal]) -> Mat<F> {
    let mut m = Mat::zeros(words[0].len(), words.len());
    for (j, w) in words.iter().enumerate() {
        m.set_col(j, &w.to_scalars::<F>());
    }
    m
}

/// Counts bit errors between the sign pattern of each trace column and the
/// true words.
fn count_errors<F: Scalar>(final_x: &Mat<F>, truth: &[RealSignal]) -> u64 {
    let mut errors = 0;
    for (j, w) in truth.iter().enumerate() {
        let got = RealSignal::from_soft(&final_x.col(j));
        errors += got.bit_errors(w);
    }
    errors
}

struct BatchData<F> {
    batch: InputBatch<F>,
    x_true: Mat<F>,
    xr_true: Option<Mat<F>>,
    norms: Vec<F>,
    words: Vec<RealSignal>,
}

fn draw_batch<F: Scalar, L: RelayLabeler<F> + ?Sized>(
    cfg: &TrainConfig,
    labeler: &L,
    size: usize,
    snr_db: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<BatchData<F>> {
    let span = cfg.snr_db_hi - cfg.snr_db_lo;
    if cfg.variant == Variant::Relay {
        let mut obs = Vec::with_capacity(size);
        let mut words = Vec::with_capacity(size);
        let mut norms = Vec::with_capacity(size);
        for _ in 0..size {
            let db = snr_db.unwrap_or_else(|| cfg.snr_db_lo + span * rng.random::<f64>());
            let s = draw_relay_sample::<F>(cfg, db, rng)?;
            obs.push((s.y, s.h));
            words.push(s.x);
            norms.push(s.norm);
        }
        let batch = InputBatch::from_single_hop(&obs)?;
        let x_true = words_to_mat(&words);
        Ok(BatchData { batch, x_true, xr_true: None, norms, words })
    } else {
        let mut probs = Vec::with_capacity(size);
        let mut words = Vec::with_capacity(size);
        let mut xr_words = Vec::with_capacity(size);
        let mut norms = Vec::with_capacity(size);
        for _ in 0..size {
            let db = snr_db.unwrap_or_else(|| cfg.snr_db_lo + span * rng.random::<f64>());
            let s = draw_dest_sample(cfg, labeler, db, rng)?;
            probs.push(s.prob);
            words.push(s.x);
            xr_words.push(s.x_r);
            norms.push(s.norm);
        }
        let batch = InputBatch::from_problems(cfg.variant, &probs)?;
        let x_true = words_to_mat(&words);
        let xr_true = words_to_mat(&xr_words);
        Ok(BatchData { batch, x_true, xr_true: Some(xr_true), norms, words })
    }
}

/// Held-out bit error rate of the current parameters.
fn evaluate<F: Scalar, L: RelayLabeler<F> + ?Sized>(
    cfg: &TrainConfig,
    labeler: &L,
    params: &NetworkParams<F>,
    eval_index: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SEED_MIX);
    rng.set_stream(eval_index + 1);
    let data = draw_batch(cfg, labeler, cfg.eval_symbols, Some(cfg.eval_snr_db), &mut rng)?;
    let trace = forward(params, &data.batch)?;
    let errors = count_errors(trace.final_x(), &data.words);
    Ok(errors as f64 / (cfg.dims.x_len() * cfg.eval_symbols) as f64)
}

/// Runs the full training loop. Returns the best-evaluated snapshot, the
/// final parameters and the per-iteration log. When `checkpoint_path` is
/// given, every improvement is written through to that file.
pub fn train<F, L>(
    cfg: &TrainConfig,
    labeler: &L,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome<F>>
where
    F: Scalar + Serialize,
    L: RelayLabeler<F> + ?Sized,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = cfg.hidden.unwrap_or(super::DEFAULT_HIDDEN_MULT * cfg.variant.input_dim(cfg.dims.x_len()));
    let mut params =
        NetworkParams::<F>::init(cfg.variant, cfg.dims.x_len(), cfg.n_layers, hidden, &mut rng)?;
    let mut adam = Adam::<F>::new(params.n_params(), cfg.adam)?;
    let mut log = Vec::with_capacity(cfg.iterations as usize);
    let mut best: Option<Checkpoint<F>> = None;
    let mut best_ber = f64::INFINITY;
    let mut eval_index = 0;

    for it in 1..=cfg.iterations {
        let data = draw_batch(cfg, labeler, cfg.batch, None, &mut rng)?;
        let trace = forward(&params, &data.batch)?;
        let spec = LossSpec {
            x_true: &data.x_true,
            xr_true: data.xr_true.as_ref(),
            norms: &data.norms,
            kind: if cfg.variant == Variant::Relay { LossKind::SourceOnly } else { cfg.loss },
        };
        let (loss, grads) = backward(&params, &data.batch, &trace, &spec)?;
        let loss_f64 = loss.as_f64();
        if !loss_f64.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration: it,
                reason: format!("loss became {loss_f64}"),
            });
        }
        let mut flat = params.to_flat();
        adam.step(&mut flat, &grads.to_flat())?;
        params.assign_flat(&flat)?;

        let mut row = TrainLogRow { iteration: it, loss: loss_f64, eval_ber: None, improved: false };
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let ber = evaluate(cfg, labeler, &params, eval_index)?;
            eval_index += 1;
            row.eval_ber = Some(ber);
            if ber < best_ber {
                best_ber = ber;
                row.improved = true;
                let cp = Checkpoint::new(params.clone(), it, Some(ber));
                if let Some(path) = checkpoint_path {
                    save_checkpoint(path, &cp)?;
                }
                best = Some(cp);
            }
        }
        log.push(row);
    }

    let best = best.unwrap_or_else(|| Checkpoint::new(params.clone(), cfg.iterations, None));
    Ok(TrainOutcome { best, final_params: params, log })
}
