use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{CovarianceField, PotentialField};
use crate::covariance::CovarianceOperator;
use crate::error::{check_dim, Result};
use crate::linalg::Vector;
use crate::rng::{digest, StreamKey};

/// One oracle response.
#[derive(Clone, Debug)]
pub struct ForceSample {
    /// Noisy force `F = -grad E + m Sigma^{1/2} xi`.
    pub force: Vector,
    /// Covariance of `force`, i.e. `m^2 Sigma(x)`.
    pub sigma: CovarianceOperator,
    pub mean_energy: f64,
    /// Exact `-grad E(x)`, kept for diagnostics and the exact-refresh baseline.
    pub mean_force: Vector,
    /// Fingerprint of the standard-normal draws behind this sample.
    pub noise_digest: u64,
}

/// Mean potential plus a prescribed covariance field with counter-based noise.
pub struct StochasticForceOracle {
    pub mean: Arc<dyn PotentialField>,
    pub cov: Arc<dyn CovarianceField>,
    pub noise_multiplier: f64,
    pub seed: u64,
    /// `true` marks a free component; frozen components of every force are zeroed.
    pub mask: Option<Vec<bool>>,
    calls: AtomicU64,
}

impl StochasticForceOracle {
    pub fn new(mean: Arc<dyn PotentialField>, cov: Arc<dyn CovarianceField>, noise_multiplier: f64, seed: u64) -> Self {
        Self { mean, cov, noise_multiplier, seed, mask: None, calls: AtomicU64::new(0) }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn key(&self, iteration: u64, entity: u64) -> StreamKey {
        StreamKey::new(self.seed, iteration, entity)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Zero the frozen components of `v` in place.
    pub fn apply_mask(&self, v: &mut Vector) {
        if let Some(mask) = &self.mask {
            for (x, &free) in v.iter_mut().zip(mask) {
                if !free {
                    *x = 0.0;
                }
            }
        }
    }

    /// Draw a force sample at `x` from the stream `key`. Counts as one oracle call.
    pub fn sample_force(&self, x: &Vector, key: StreamKey) -> Result<ForceSample> {
        check_dim(self.dim(), x.len())?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (mean_energy, grad) = self.mean.energy_gradient(x)?;
        let mut mean_force = -grad;
        self.apply_mask(&mut mean_force);
        let raw = self.cov.sigma_at(x)?;
        let mut stream = key.stream();
        let noise_digest = digest(stream.clone().normals(4).as_slice());
        let mut force = mean_force.clone();
        if self.noise_multiplier != 0.0 {
            force += raw.sample(&mut stream) * self.noise_multiplier;
            self.apply_mask(&mut force);
        }
        let sigma = raw.scaled(self.noise_multiplier * self.noise_multiplier);
        Ok(ForceSample { force, sigma, mean_energy, mean_force, noise_digest })
    }
}
