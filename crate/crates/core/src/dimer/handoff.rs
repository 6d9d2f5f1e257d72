use crate::covariance::{CovarianceOperator, Metric};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::neb::{hj_tangent, Band, NebParams, NebVariant, ObliqueProjector};
use crate::potentials::StochasticForceOracle;
use crate::rng::{entity, StreamKey};

use super::params::DimerParams;
use super::steps::DimerState;

/// How the noise trace `tr(Q_perp G Sigma G Q_perp^T)` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    Dense,
    /// Rademacher probing with this many probes.
    Probing(usize),
}

#[derive(Clone, Debug)]
pub struct Handoff {
    pub accept: bool,
    /// Path-normal signal-to-noise ratio at the handoff image.
    pub ratio: f64,
    /// Index of the handoff image.
    pub image: usize,
    pub state: DimerState,
}

/// `Q_perp^T z = z - tau (G tau)^T z / (tau^T G tau)`.
fn perp_transpose(p: &ObliqueProjector, z: &Vector) -> Vector {
    z - &p.tau * (p.g_tau.dot(z) / p.t_g_t)
}

/// `tr(Q_perp G Sigma G Q_perp^T)`, exactly or by probing with `key`.
pub fn normal_noise_trace(
    p: &ObliqueProjector,
    metric: &Metric,
    sigma: &CovarianceOperator,
    mode: TraceMode,
    key: StreamKey,
) -> Result<f64> {
    let d = p.tau.len();
    // z^T A z = w^T Sigma w with w = G Q_perp^T z
    let quad = |z: &Vector| -> Result<f64> {
        let w = metric.apply(&perp_transpose(p, z))?;
        sigma.quadratic_form(&w)
    };
    match mode {
        TraceMode::Dense => {
            let mut t = 0.0;
            for j in 0..d {
                let mut e = Vector::zeros(d);
                e[j] = 1.0;
                t += quad(&e)?;
            }
            Ok(t)
        }
        TraceMode::Probing(n) => {
            if n == 0 {
                return Err(Error::InvalidParameter("probing needs at least one probe".into()));
            }
            let mut noise = key.stream();
            let mut acc = 0.0;
            for _ in 0..n {
                let z = Vector::from_fn(d, |_, _| noise.rademacher());
                acc += quad(&z)?;
            }
            Ok(acc / n as f64)
        }
    }
}

/// `|Q_perp G g| / (sqrt(trace) + eps)`.
pub fn handoff_ratio(
    p: &ObliqueProjector,
    metric: &Metric,
    g_hat: &Vector,
    sigma: &CovarianceOperator,
    mode: TraceMode,
    key: StreamKey,
    epsilon: f64,
) -> Result<f64> {
    let signal = p.perp(&metric.apply(g_hat)?).norm();
    let noise = normal_noise_trace(p, metric, sigma, mode, key)?.max(0.0).sqrt();
    Ok(signal / (noise + epsilon))
}

/// Initial translation trust radius `min(Delta_NEB, 2 |x_c - x_{c-1}|)`.
pub fn initial_trust_radius(neb_radius: f64, x_c: &Vector, x_prev: &Vector) -> f64 {
    neb_radius.min(2.0 * (x_c - x_prev).norm())
}

/// Seed a dimer from a finished band at its climbing (or highest) image.
/// One oracle call at the image supplies the gradient and covariance of the
/// signal-to-noise test; the band variant supplies the metric.
#[allow(clippy::too_many_arguments)]
pub fn handoff(
    band: &Band,
    oracle: &StochasticForceOracle,
    variant: &dyn NebVariant,
    neb: &NebParams,
    neb_radius: f64,
    params: &DimerParams,
    mode: TraceMode,
) -> Result<Handoff> {
    let c = band.climbing.unwrap_or_else(|| band.highest_image());
    let mut scratch = band.clone();
    let tau = hj_tangent(&mut scratch, c, 0.0)?;
    let x_c = band.images[c].clone();
    let neb = neb.scaled_for(oracle.noise_multiplier);
    let sample = oracle.sample_force(&x_c, oracle.key(0, entity::HANDOFF_PROBE))?;
    let metric = variant.metric(&sample.sigma, &neb.metric_params())?;
    let p = ObliqueProjector::new(&metric, &tau, neb.epsilon)?;
    let g_hat = -&sample.force;
    let ratio = handoff_ratio(&p, &metric, &g_hat, &sample.sigma, mode, oracle.key(1, entity::HANDOFF_PROBE), params.epsilon)?;
    let mut state = DimerState::new(x_c.clone(), tau, params)?;
    state.trust_radius = initial_trust_radius(neb_radius, &x_c, &band.images[c - 1]);
    Ok(Handoff { accept: ratio <= params.eta_hand, ratio, image: c, state })
}
