use crate::covariance::Metric;
use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Oblique projections for a fixed metric and tangent.
///
/// `par(z) = G tau (tau^T z) / (tau^T G tau)` and `perp(z) = z - par(z)`.
/// The range of `perp` is the Euclidean hyperplane `tau^T z = 0` and its
/// kernel is `span{G tau}`, so `perp(G g) = 0` exactly when `g` is parallel
/// to `tau`.
#[derive(Clone, Debug)]
pub struct ObliqueProjector {
    pub tau: Vector,
    pub g_tau: Vector,
    /// `tau^T G tau`.
    pub t_g_t: f64,
}

impl ObliqueProjector {
    pub fn new(metric: &Metric, tau: &Vector, epsilon: f64) -> Result<Self> {
        let g_tau = metric.apply(tau)?;
        Self::from_parts(tau.clone(), g_tau, epsilon)
    }

    pub fn from_parts(tau: Vector, g_tau: Vector, epsilon: f64) -> Result<Self> {
        let t_g_t = tau.dot(&g_tau);
        if !(t_g_t > epsilon) {
            return Err(Error::DegenerateTangent(t_g_t));
        }
        Ok(Self { tau, g_tau, t_g_t })
    }

    pub fn par(&self, z: &Vector) -> Vector {
        &self.g_tau * (self.tau.dot(z) / self.t_g_t)
    }

    pub fn perp(&self, z: &Vector) -> Vector {
        z - self.par(z)
    }
}

/// `(Q_perp z, Q_par z)` for metric `G` and tangent `tau`.
pub fn oblique_project(metric: &Metric, tau: &Vector, z: &Vector) -> Result<(Vector, Vector)> {
    let p = ObliqueProjector::new(metric, tau, 1e-300)?;
    let par = p.par(z);
    Ok((z - &par, par))
}
