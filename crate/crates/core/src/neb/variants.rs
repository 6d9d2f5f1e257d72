use std::collections::BTreeMap;
use std::sync::Arc;

use crate::covariance::{CovarianceOperator, Metric, MetricParams};
use crate::error::{Error, Result};
use crate::potentials::{CovarianceField, DiagonalField};

/// Where a band variant takes its metric from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricSource {
    Euclidean,
    Full,
    Diagonal,
}

/// One NEB update rule. Variants differ only in how covariance enters the
/// step; every variant consumes one oracle call per interior image.
pub trait NebVariant: Send + Sync {
    fn name(&self) -> &'static str;

    fn metric_source(&self) -> MetricSource;

    /// Spring measured in the image metric (otherwise Euclidean).
    fn metric_spring(&self) -> bool {
        false
    }

    /// Takes the transient log-det penalty step.
    fn uses_penalty(&self) -> bool {
        false
    }

    /// Replaces sampled forces by exact ones at high-uncertainty images.
    fn refreshes(&self) -> bool {
        false
    }

    fn metric(&self, sigma: &CovarianceOperator, params: &MetricParams) -> Result<Metric> {
        match self.metric_source() {
            MetricSource::Euclidean => Ok(Metric::identity(sigma.dim())),
            MetricSource::Full => Metric::new(sigma, params),
            MetricSource::Diagonal => Metric::new(&sigma.to_diagonal(), params),
        }
    }

    /// The field whose log-determinant is penalised, if any.
    fn penalty_field(&self, field: Arc<dyn CovarianceField>) -> Option<Arc<dyn CovarianceField>> {
        if !self.uses_penalty() {
            return None;
        }
        Some(match self.metric_source() {
            MetricSource::Diagonal => Arc::new(DiagonalField(field)),
            _ => field,
        })
    }
}

macro_rules! variant {
    ($ty:ident, $name:literal, $src:expr, spring = $spring:expr, penalty = $pen:expr, refresh = $refresh:expr) => {
        #[derive(Clone, Copy, Debug, Default)]
        pub struct $ty;

        impl NebVariant for $ty {
            fn name(&self) -> &'static str {
                $name
            }
            fn metric_source(&self) -> MetricSource {
                $src
            }
            fn metric_spring(&self) -> bool {
                $spring
            }
            fn uses_penalty(&self) -> bool {
                $pen
            }
            fn refreshes(&self) -> bool {
                $refresh
            }
        }
    };
}

variant!(StdNeb, "std", MetricSource::Euclidean, spring = false, penalty = false, refresh = false);
variant!(PenaltyNeb, "pen", MetricSource::Euclidean, spring = false, penalty = true, refresh = false);
variant!(RefreshNeb, "al", MetricSource::Euclidean, spring = false, penalty = false, refresh = true);
variant!(MetricNeb, "metric", MetricSource::Full, spring = false, penalty = false, refresh = false);
variant!(DiagNeb, "diag", MetricSource::Diagonal, spring = true, penalty = true, refresh = false);
variant!(UaNeb, "ua", MetricSource::Full, spring = true, penalty = true, refresh = false);

/// Band variants by name.
#[derive(Clone)]
pub struct NebRegistry {
    entries: BTreeMap<String, Arc<dyn NebVariant>>,
}

impl NebRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(StdNeb));
        r.register(Arc::new(PenaltyNeb));
        r.register(Arc::new(RefreshNeb));
        r.register(Arc::new(MetricNeb));
        r.register(Arc::new(DiagNeb));
        r.register(Arc::new(UaNeb));
        r
    }

    pub fn register(&mut self, v: Arc<dyn NebVariant>) {
        self.entries.insert(v.name().to_string(), v);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn NebVariant>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown NEB variant `{name}` (known: {})", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lookup() {
        let r = NebRegistry::builtin();
        assert_eq!(r.names(), ["al", "diag", "metric", "pen", "std", "ua"]);
        assert_eq!(r.get("ua").unwrap().metric_source(), MetricSource::Full);
        assert!(r.get("ua").unwrap().metric_spring());
        assert!(!r.get("metric").unwrap().metric_spring());
        assert!(r.get("al").unwrap().refreshes());
        assert!(matches!(r.get("nope"), Err(Error::Config(_))));
    }
}
