//! Flat-vector Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Step size and moment decay settings.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Optimizer state: first and second moment estimates plus the step count.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    cfg: AdamConfig,
    m: Vec<F>,
    v: Vec<F>,
    steps: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Result<Self> {
        if !(cfg.lr > 0.0 && cfg.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Adam needs positive step size and epsilon, got {} and {}",
                cfg.lr, cfg.eps
            )));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::InvalidArgument(format!(
                "Adam decay rates must lie in [0, 1), got {} and {}",
                cfg.beta1, cfg.beta2
            )));
        }
        Ok(Adam { cfg, m: vec![F::zero(); n_params], v: vec![F::zero(); n_params], steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update in place.
    pub fn step(&mut self, params: &mut [F], grads: &[F]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch(format!(
                "Adam state has {} entries, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.steps += 1;
        let b1 = F::from_f64(self.cfg.beta1);
        let b2 = F::from_f64(self.cfg.beta2);
        let one = F::one();
        let corr1 = one - F::from_f64(self.cfg.beta1.powi(self.steps as i32));
        let corr2 = one - F::from_f64(self.cfg.beta2.powi(self.steps as i32));
        let lr = F::from_f64(self.cfg.lr);
        let eps = F::from_f64(self.cfg.eps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mhat = self.m[i] / corr1;
            let vhat = self.v[i] / corr2;
            params[i] = params[i] - lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}
