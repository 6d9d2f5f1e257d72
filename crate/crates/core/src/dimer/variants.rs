use std::collections::BTreeMap;
use std::sync::Arc;

use crate::covariance::{CovarianceOperator, Metric, MetricParams};
use crate::error::{Error, Result};
use crate::neb::MetricSource;

/// One dimer update rule. Both built-in variants spend three oracle calls per
/// iteration (two dimer endpoints and the center).
pub trait DimerVariant: Send + Sync {
    fn name(&self) -> &'static str;

    /// Metric of the reflected-gradient translation.
    fn metric_source(&self) -> MetricSource;

    /// Precondition the rotation with the HVP covariance.
    fn weighted_rotation(&self) -> bool;

    /// Takes the transient log-det penalty step (only when `gamma0 > 0`).
    fn uses_penalty(&self) -> bool {
        false
    }

    fn metric(&self, sigma: &CovarianceOperator, params: &MetricParams) -> Result<Metric> {
        match self.metric_source() {
            MetricSource::Euclidean => Ok(Metric::identity(sigma.dim())),
            MetricSource::Full => Metric::new(sigma, params),
            MetricSource::Diagonal => Metric::new(&sigma.to_diagonal(), params),
        }
    }
}

/// Classical dimer on sampled forces.
#[derive(Clone, Copy, Debug, Default)]
pub struct StdDimer;

impl DimerVariant for StdDimer {
    fn name(&self) -> &'static str {
        "std"
    }
    fn metric_source(&self) -> MetricSource {
        MetricSource::Euclidean
    }
    fn weighted_rotation(&self) -> bool {
        false
    }
}

/// Covariance-weighted rotation and metric translation.
#[derive(Clone, Copy, Debug, Default)]
pub struct UaDimer;

impl DimerVariant for UaDimer {
    fn name(&self) -> &'static str {
        "ua"
    }
    fn metric_source(&self) -> MetricSource {
        MetricSource::Full
    }
    fn weighted_rotation(&self) -> bool {
        true
    }
    fn uses_penalty(&self) -> bool {
        true
    }
}

/// Dimer variants by name.
#[derive(Clone)]
pub struct DimerRegistry {
    entries: BTreeMap<String, Arc<dyn DimerVariant>>,
}

impl DimerRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(StdDimer));
        r.register(Arc::new(UaDimer));
        r
    }

    pub fn register(&mut self, v: Arc<dyn DimerVariant>) {
        self.entries.insert(v.name().to_string(), v);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DimerVariant>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown dimer variant `{name}` (known: {})", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}
