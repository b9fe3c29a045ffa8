//! Real-valued system model for the two-hop relay link.
//!
//! The link under study has a source with `N` transmit antennas, a relay with
//! `N_r` antennas that decodes and re-encodes, and a destination with `N_d`
//! antennas. Each complex baseband equation `y = H x + z` is rewritten over the
//! reals by stacking real and imaginary parts, so a complex `m x n` channel
//! becomes the real `2m x 2n` block matrix `[[Re H, -Im H], [Im H, Re H]]` and
//! the transmitted QPSK symbols become sign vectors in `{+1, -1}^(2N)`.
//!
//! Conventions used throughout the crate:
//! * noise on a real receive dimension has variance `sigma^2 / 2`, so the
//!   complex per-antenna noise variance is `sigma^2`;
//! * the operating point `rho = 2N / sigma^2` relates the total transmit
//!   energy `2N` of a sign vector to the noise level;
//! * channel entries are complex circular Gaussians with a configurable
//!   per-entry variance (`1` for the direct links unless stated otherwise).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// Antenna counts of the three terminals (complex dimensions).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDims {
    /// Source transmit antennas `N`.
    pub n: usize,
    /// Relay antennas `N_r`.
    pub n_r: usize,
    /// Destination antennas `N_d`.
    pub n_d: usize,
}

impl SystemDims {
    /// Validates that every terminal has at least one antenna.
    pub fn new(n: usize, n_r: usize, n_d: usize) -> Result<Self> {
        if n == 0 || n_r == 0 || n_d == 0 {
            return Err(Error::InvalidArgument(format!(
                "antenna counts must be positive, got n={n}, n_r={n_r}, n_d={n_d}"
            )));
        }
        Ok(SystemDims { n, n_r, n_d })
    }

    /// Length of a real transmit vector, `2N`.
    pub fn x_len(&self) -> usize {
        2 * self.n
    }

    /// Length of a real relay receive vector, `2N_r`.
    pub fn relay_rx_len(&self) -> usize {
        2 * self.n_r
    }

    /// Length of a real destination receive vector, `2N_d`.
    pub fn dest_rx_len(&self) -> usize {
        2 * self.n_d
    }
}

/// Transmit vector over the sign alphabet `{+1, -1}`.
///
/// Entries are stored as `i8` so hard decisions compare exactly; convert with
/// [`RealSignal::to_scalars`] when a floating-point copy is needed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealSignal {
    values: Vec<i8>,
}

impl RealSignal {
    /// Wraps a sign vector, rejecting anything outside `{+1, -1}`.
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("signal must be non-empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| **v != 1 && **v != -1) {
            return Err(Error::InvalidArgument(format!(
                "signal entries must be +1 or -1, got {bad}"
            )));
        }
        Ok(RealSignal { values })
    }

    /// The `index`-th sign vector of length `len` in lexicographic order,
    /// where `-1` sorts before `+1`. Index `0` is the all-minus-one vector and
    /// index `2^len - 1` is the all-plus-one vector.
    pub fn from_index(index: u64, len: usize) -> Self {
        assert!(len > 0 && len < 64, "from_index supports 1..=63 entries");
        assert!(index < (1u64 << len), "index out of range");
        let values = (0..len)
            .map(|j| if (index >> (len - 1 - j)) & 1 == 1 { 1i8 } else { -1i8 })
            .collect();
        RealSignal { values }
    }

    /// Hard decision: maps each entry of `soft` to its sign, with ties at
    /// exactly zero resolved to `+1`.
    pub fn from_soft<F: Scalar>(soft: &[F]) -> Self {
        let values = soft.iter().map(|&v| if v >= F::zero() { 1i8 } else { -1i8 }).collect();
        RealSignal { values }
    }

    /// Draws a uniform sign vector.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let values = (0..len).map(|_| if rng.random::<bool>() { 1i8 } else { -1i8 }).collect();
        RealSignal { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.values
    }

    /// Floating-point copy of the sign vector.
    pub fn to_scalars<F: Scalar>(&self) -> Vec<F> {
        self.values.iter().map(|&v| F::from_f64(v as f64)).collect()
    }

    /// Number of positions where the two signals disagree.
    pub fn bit_errors(&self, other: &RealSignal) -> u64 {
        assert_eq!(self.len(), other.len(), "bit_errors length mismatch");
        self.values.iter().zip(&other.values).filter(|(a, b)| a != b).count() as u64
    }
}

/// How a real channel matrix was produced. Detectors treat all provenances
/// identically; the tag exists so substituted penalty channels (identities,
/// scaled identities, diagonal equivalents) are distinguishable in logs and
/// tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Block map of a sampled complex channel.
    FromComplex,
    /// Diagonal matrix of per-stream gains from a zero-forcing front end.
    DiagonalEquivalent,
    /// `c * I` for some scale `c`.
    ScaledIdentity,
    /// Identity substitution used by signal-distance penalties.
    Identity,
    /// All-zero channel (decouples the term it multiplies).
    Zero,
}

/// Real-valued channel matrix together with its provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RealChannel<F> {
    pub m: Mat<F>,
    pub provenance: Provenance,
}

impl<F: Scalar> RealChannel<F> {
    pub fn rows(&self) -> usize {
        self.m.rows()
    }

    pub fn cols(&self) -> usize {
        self.m.cols()
    }

    /// Diagonal channel from strictly positive per-stream gains.
    pub fn diagonal_equivalent(gains: &[F]) -> Result<Self> {
        if gains.iter().any(|g| *g <= F::zero()) {
            return Err(Error::InvalidArgument(
                "diagonal equivalent gains must be strictly positive".into(),
            ));
        }
        Ok(RealChannel { m: Mat::from_diag(gains), provenance: Provenance::DiagonalEquivalent })
    }

    /// `c * I` on `n` real dimensions.
    pub fn scaled_identity(n: usize, c: F) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, c);
        }
        RealChannel { m, provenance: Provenance::ScaledIdentity }
    }

    /// Identity channel on `n` real dimensions.
    pub fn identity(n: usize) -> Self {
        RealChannel { m: Mat::identity(n), provenance: Provenance::Identity }
    }

    /// All-zero channel.
    pub fn zero(rows: usize, cols: usize) -> Self {
        RealChannel { m: Mat::zeros(rows, cols), provenance: Provenance::Zero }
    }
}

/// Expands a complex matrix, given as its real and imaginary parts, into the
/// real block form `[[Re, -Im], [Im, Re]]`.
///
/// The map is a ring homomorphism: it turns complex matrix products and
/// matrix-vector products into their real counterparts, which is what lets the
/// rest of the crate work purely over the reals.
pub fn complex_to_real<F: Scalar>(re: &Mat<F>, im: &Mat<F>) -> Result<RealChannel<F>> {
    if re.rows() != im.rows() || re.cols() != im.cols() {
        return Err(Error::DimensionMismatch(format!(
            "complex_to_real: real part is {}x{}, imaginary part is {}x{}",
            re.rows(),
            re.cols(),
            im.rows(),
            im.cols()
        )));
    }
    let (r, c) = (re.rows(), re.cols());
    let mut m = Mat::zeros(2 * r, 2 * c);
    m.insert_block(0, 0, re, F::one());
    m.insert_block(0, c, im, -F::one());
    m.insert_block(r, 0, im, F::one());
    m.insert_block(r, c, re, F::one());
    Ok(RealChannel { m, provenance: Provenance::FromComplex })
}

/// Draws one standard normal variate on the `f64` stream and converts it.
///
/// Sampling always happens in `f64` (rand_distr's ziggurat implementation),
/// regardless of the working precision, so the consumed random stream — and
/// therefore every seeded experiment — is identical for `f32` and `f64` runs.
pub fn sample_standard_normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> F {
    let v: f64 = StandardNormal.sample(rng);
    F::from_f64(v)
}

/// Samples a complex Gaussian channel with `n_rx x n_tx` complex entries of
/// variance `var` each and returns its real block form. Real and imaginary
/// parts are drawn per entry in row-major order (real first), each with
/// variance `var / 2`.
pub fn sample_channel<F: Scalar, R: Rng + ?Sized>(
    n_rx: usize,
    n_tx: usize,
    var: F,
    rng: &mut R,
) -> Result<RealChannel<F>> {
    if var <= F::zero() {
        return Err(Error::InvalidArgument(format!("channel variance must be positive, got {var}")));
    }
    let sd = (var / F::from_f64(2.0)).sqrt();
    let mut re = Mat::zeros(n_rx, n_tx);
    let mut im = Mat::zeros(n_rx, n_tx);
    for i in 0..n_rx {
        for j in 0..n_tx {
            re.set(i, j, sd * sample_standard_normal::<F, R>(rng));
            im.set(i, j, sd * sample_standard_normal::<F, R>(rng));
        }
    }
    complex_to_real(&re, &im)
}

/// Sends `x` through `h` and adds white Gaussian noise of per-component
/// variance `sigma2 / 2`. A zero `sigma2` yields the noiseless product.
pub fn transmit<F: Scalar, R: Rng + ?Sized>(
    h: &RealChannel<F>,
    x: &RealSignal,
    sigma2: F,
    rng: &mut R,
) -> Result<Vec<F>> {
    if x.len() != h.cols() {
        return Err(Error::DimensionMismatch(format!(
            "transmit: channel is {}x{} but signal has length {}",
            h.rows(),
            h.cols(),
            x.len()
        )));
    }
    if sigma2 < F::zero() {
        return Err(Error::InvalidArgument(format!("noise variance must be non-negative, got {sigma2}")));
    }
    let xs: Vec<F> = x.to_scalars();
    let mut y = h.m.matvec(&xs);
    if sigma2 > F::zero() {
        let sd = (sigma2 / F::from_f64(2.0)).sqrt();
        for yi in y.iter_mut() {
            *yi += sd * sample_standard_normal::<F, R>(rng);
        }
    }
    Ok(y)
}

/// Operating point on the SNR axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint<F> {
    /// Linear value `rho = 2N / sigma^2`.
    pub rho: F,
    /// The same point in decibels.
    pub snr_db: F,
}

impl<F: Scalar> SnrPoint<F> {
    /// Operating point from a decibel value.
    pub fn from_db(snr_db: F) -> Self {
        let ten = F::from_f64(10.0);
        SnrPoint { rho: ten.powf(snr_db / ten), snr_db }
    }

    /// Noise variance `sigma^2 = 2N / rho` for a source with `n` antennas.
    pub fn sigma2(&self, n: usize) -> F {
        F::from_f64(2.0 * n as f64) / self.rho
    }
}

/// Noise variance for an SNR given in decibels: `sigma^2 = 2N / 10^(db/10)`.
pub fn snr_to_sigma2<F: Scalar>(snr_db: F, n: usize) -> F {
    SnrPoint::from_db(snr_db).sigma2(n)
}

/// Floor applied to the two-level relay error rate so its logarithm stays
/// bounded at high source-relay SNR.
pub const ERROR_RATE_FLOOR: f64 = 1e-12;

/// Average SNR of the source-relay hop, `gamma_sr = 2N sigma2_sr / sigma^2`.
pub fn sr_link_snr<F: Scalar>(n: usize, sigma2_sr: F, sigma2: F) -> F {
    F::from_f64(2.0 * n as f64) * sigma2_sr / sigma2
}

/// Two-level model of the relay word error rate: a diversity-driven power law
/// `gamma_sr^(-d)` clamped into `[ERROR_RATE_FLOOR, 1]`. The diversity order
/// `d` is that of the relay's own detector.
pub fn two_level_error_rate<F: Scalar>(gamma_sr: F, diversity: u32) -> F {
    if gamma_sr <= F::zero() {
        return F::one();
    }
    let p = gamma_sr.powi(-(diversity as i32));
    p.max(F::from_f64(ERROR_RATE_FLOOR)).min(F::one())
}

/// Scaled-identity stand-in for the source-relay channel whose quarter-scaled
/// quadratic penalty equals the two-level log penalty on differing words:
/// `(1/4) c^2 ||x - x_r||^2 = sigma^2 ln(1/p_e)` when the words differ in one
/// position, giving `c = sigma sqrt(ln(1/p_e))`. A certain relay
/// (`p_e = 1`) degenerates to no coupling at all.
pub fn error_scaled_channel<F: Scalar>(x_len: usize, sigma2: F, p_e: F) -> Result<RealChannel<F>> {
    if !(p_e > F::zero() && p_e <= F::one()) {
        return Err(Error::InvalidArgument(format!(
            "error rate must lie in (0, 1], got {p_e}"
        )));
    }
    let c = (sigma2 * (F::one() / p_e).ln()).sqrt();
    Ok(RealChannel::scaled_identity(x_len, c))
}

/// One draw of the full two-hop scenario: the three channels plus the noise
/// and source-relay link parameters detectors need.
#[derive(Clone, Debug)]
pub struct RelayRealization<F> {
    /// Source-to-relay channel (real form, `2N_r x 2N`).
    pub h_sr: RealChannel<F>,
    /// Source-to-destination channel (`2N_d x 2N`).
    pub h_sd: RealChannel<F>,
    /// Relay-to-destination channel (`2N_d x 2N`).
    pub h_rd: RealChannel<F>,
    /// Noise variance `sigma^2` shared by both hops.
    pub sigma2: F,
    /// Per-entry variance of the source-relay channel.
    pub sigma2_sr: F,
}

impl<F: Scalar> RelayRealization<F> {
    /// Draws all three channels for the given dimensions. Direct links use
    /// unit entry variance; the source-relay link uses `sigma2_sr`.
    pub fn sample<R: Rng + ?Sized>(
        dims: &SystemDims,
        sigma2: F,
        sigma2_sr: F,
        rng: &mut R,
    ) -> Result<Self> {
        if sigma2 <= F::zero() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        let h_sr = sample_channel(dims.n_r, dims.n, sigma2_sr, rng)?;
        let h_sd = sample_channel(dims.n_d, dims.n, F::one(), rng)?;
        let h_rd = sample_channel(dims.n_d, dims.n, F::one(), rng)?;
        Ok(RelayRealization { h_sr, h_sd, h_rd, sigma2, sigma2_sr })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm_sq, vec_sub};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_level_rate_follows_power_law_and_clamps() {
        // gamma = 2 * 2 * 4.0 / 0.4 = 40. d = 2 -> 1/1600.
        let gamma = sr_link_snr(2, 4.0, 0.4);
        assert!((gamma - 40.0).abs() < 1e-12);
        assert!((two_level_error_rate(gamma, 2) - 1.0 / 1600.0).abs() < 1e-15);
        // Below unit SNR the power law exceeds one and clamps.
        assert_eq!(two_level_error_rate(0.5, 3), 1.0);
        // Very high SNR hits the floor.
        assert_eq!(two_level_error_rate(1e9, 4), ERROR_RATE_FLOOR);
        assert_eq!(two_level_error_rate(-1.0, 2), 1.0);
    }

    #[test]
    fn error_scaled_channel_reproduces_log_penalty() {
        let sigma2 = 0.8f64;
        let p_e = 0.01;
        let ch = error_scaled_channel(4, sigma2, p_e).unwrap();
        assert_eq!(ch.provenance, Provenance::ScaledIdentity);
        // One differing position: (1/4) * ||c * diff||^2 with diff = 2.
        let pen = 0.25 * (ch.m.at(0, 0) * 2.0).powi(2);
        assert!((pen - sigma2 * (1.0f64 / p_e).ln()).abs() < 1e-12);
        // A certain relay gives zero coupling.
        let certain = error_scaled_channel(4, sigma2, 1.0).unwrap();
        assert_eq!(certain.m.at(0, 0), 0.0);
        assert!(error_scaled_channel(4, sigma2, 0.0).is_err());
        assert!(error_scaled_channel(4, sigma2, 1.5).is_err());
    }

    #[test]
    fn block_map_preserves_complex_multiplication() {
        // (A + iB)(x + iy) expanded by hand must equal the real block product.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let (m, n) = (3, 2);
            let re = Mat::from_fn(m, n, |_, _| rng.random::<f64>() - 0.5);
            let im = Mat::from_fn(m, n, |_, _| rng.random::<f64>() - 0.5);
            let xr: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let xi: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();

            let h = complex_to_real(&re, &im).unwrap();
            let mut x = xr.clone();
            x.extend_from_slice(&xi);
            let y = h.m.matvec(&x);

            // Manual complex arithmetic.
            let yr = vec_sub(&re.matvec(&xr), &im.matvec(&xi));
            let yi = {
                let mut v = im.matvec(&xr);
                for (vi, &t) in v.iter_mut().zip(re.matvec(&xi).iter()) {
                    *vi += t;
                }
                v
            };
            for k in 0..m {
                assert!((y[k] - yr[k]).abs() < 1e-12);
                assert!((y[k + m] - yi[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_map_2x2_example() {
        // A 1x1 complex channel h = 2 + 3i maps to [[2, -3], [3, 2]].
        let re = Mat::from_rows(&[vec![2.0]]);
        let im = Mat::from_rows(&[vec![3.0]]);
        let h = complex_to_real(&re, &im).unwrap();
        assert_eq!(h.m.row(0), &[2.0, -3.0]);
        assert_eq!(h.m.row(1), &[3.0, 2.0]);
        assert_eq!(h.provenance, Provenance::FromComplex);
    }

    #[test]
    fn signal_enumeration_is_lexicographic() {
        let s0 = RealSignal::from_index(0, 3);
        let s3 = RealSignal::from_index(3, 3);
        let s7 = RealSignal::from_index(7, 3);
        assert_eq!(s0.as_slice(), &[-1, -1, -1]);
        assert_eq!(s3.as_slice(), &[-1, 1, 1]);
        assert_eq!(s7.as_slice(), &[1, 1, 1]);
        // Successive indices are strictly increasing in lexicographic order.
        let mut prev = RealSignal::from_index(0, 3).as_slice().to_vec();
        for idx in 1..8u64 {
            let cur = RealSignal::from_index(idx, 3).as_slice().to_vec();
            assert!(cur > prev, "enumeration must be lexicographic");
            prev = cur;
        }
    }

    #[test]
    fn hard_decision_resolves_zero_up() {
        let s = RealSignal::from_soft(&[0.3f64, -0.2, 0.0, -0.0]);
        // IEEE -0.0 >= 0.0 is true, so both zeros map to +1.
        assert_eq!(s.as_slice(), &[1, -1, 1, 1]);
    }

    #[test]
    fn signal_rejects_invalid_entries() {
        assert!(RealSignal::new(vec![1, -1, 0]).is_err());
        assert!(RealSignal::new(vec![]).is_err());
        assert!(RealSignal::new(vec![1, -1, 1]).is_ok());
    }

    #[test]
    fn snr_conversion_matches_definition() {
        // rho = 2N / sigma^2 with N = 2: at 0 dB sigma^2 = 4, at 10 dB 0.4.
        assert!((snr_to_sigma2(0.0f64, 2) - 4.0).abs() < 1e-12);
        assert!((snr_to_sigma2(10.0f64, 2) - 0.4).abs() < 1e-12);
        let p = SnrPoint::from_db(10.0f64);
        assert!((p.rho - 10.0).abs() < 1e-12);
    }

    #[test]
    fn noise_variance_is_half_sigma2_per_component() {
        // Empirical variance over >= 1e5 samples must sit within three
        // standard errors of sigma^2 / 2.
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let dims = SystemDims::new(1, 1, 1).unwrap();
        let h = RealChannel::<f64>::zero(dims.relay_rx_len(), dims.x_len());
        let x = RealSignal::new(vec![1, -1]).unwrap();
        let sigma2 = 0.8;
        let mut samples = Vec::with_capacity(200_000);
        for _ in 0..100_000 {
            let y = transmit(&h, &x, sigma2, &mut rng).unwrap();
            samples.extend_from_slice(&y);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        let want = sigma2 / 2.0;
        // Variance of the sample variance for Gaussians is ~ 2 var^2 / n.
        let se = (2.0 * want * want / n).sqrt();
        assert!(
            (var - want).abs() <= 3.0 * se,
            "empirical variance {var} too far from {want} (se {se})"
        );
    }

    #[test]
    fn channel_entries_have_requested_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let var = 1.7f64;
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..2_000 {
            let h = sample_channel::<f64, _>(2, 2, var, &mut rng).unwrap();
            // Complex entry (i,j) has real part at (i,j) and imaginary part at
            // (i + 2, j); |h|^2 averages to var.
            for i in 0..2 {
                for j in 0..2 {
                    let re = h.m.at(i, j);
                    let im = h.m.at(i + 2, j);
                    acc += re * re + im * im;
                    count += 1;
                }
            }
        }
        let mean = acc / count as f64;
        assert!((mean - var).abs() < 0.05 * var, "complex entry variance {mean} vs {var}");
    }

    #[test]
    fn transmit_checks_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = RealChannel::<f64>::identity(4);
        let x = RealSignal::new(vec![1, -1]).unwrap();
        assert!(transmit(&h, &x, 0.1, &mut rng).is_err());
    }

    #[test]
    fn noiseless_transmit_is_exact_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = sample_channel::<f64, _>(2, 2, 1.0, &mut rng).unwrap();
        let x = RealSignal::new(vec![1, -1, -1, 1]).unwrap();
        let y = transmit(&h, &x, 0.0, &mut rng).unwrap();
        let want = h.m.matvec(&x.to_scalars());
        assert_eq!(norm_sq(&vec_sub(&y, &want)), 0.0);
    }
}
