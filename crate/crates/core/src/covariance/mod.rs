//! Covariance operators, reliability metrics and calibration.

mod estimate;
mod metric;
mod operator;

pub use estimate::{
    calibrate_nll, directional_variance_from_energies, ensemble_covariance, logdet_grad_dir, logdet_gradient,
    BlockPattern,
};
pub use metric::{apply_metric, Metric, MetricParams, CG_MAX_ITERATIONS, TRACE_PROBES};
pub use operator::{apply_sigma, logdet, CovarianceOperator, LocalBlock};
