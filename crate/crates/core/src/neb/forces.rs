use crate::covariance::{logdet, CovarianceOperator, Metric};
use crate::error::{Error, Result};
use crate::linalg::{all_finite, Vector};
use crate::potentials::{CovarianceField, ForceSample, PotentialField, StochasticForceOracle};

use super::band::{hj_tangent, Band};
use super::params::NebParams;
use super::projection::ObliqueProjector;
use super::variants::NebVariant;

/// Oracle responses for one iteration, indexed by interior image (`0..n`).
#[derive(Clone, Debug)]
pub struct BandSamples {
    pub samples: Vec<ForceSample>,
    /// Interior indices (1-based band indices) whose sample was replaced by the exact force.
    pub refreshed: Vec<usize>,
}

/// Query one force per interior image with keys `(seed, k, i)`.
///
/// Refreshing variants still spend the call and then substitute the exact
/// mean force at the `refresh_count` images of largest `tr(Sigma)`.
pub fn sample_band(
    band: &Band,
    oracle: &StochasticForceOracle,
    variant: &dyn NebVariant,
    params: &NebParams,
    k: usize,
) -> Result<BandSamples> {
    let mut samples = band
        .interior()
        .map(|i| oracle.sample_force(&band.images[i], oracle.key(k as u64, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut refreshed = Vec::new();
    if variant.refreshes() && params.refresh_interval > 0 && k > 0 && k % params.refresh_interval == 0 {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[b].sigma.trace().total_cmp(&samples[a].sigma.trace()).then(a.cmp(&b)));
        for &j in order.iter().take(params.refresh_count) {
            samples[j].force = samples[j].mean_force.clone();
            refreshed.push(j + 1);
        }
        refreshed.sort_unstable();
    }
    Ok(BandSamples { samples, refreshed })
}

/// Forces and per-image diagnostics for one iteration.
#[derive(Debug)]
pub struct BandForces {
    /// Assembled force per interior image.
    pub forces: Vec<Vector>,
    /// Normal residual `r_i = Q_perp G_i g_i` of the sampled gradient.
    pub normal: Vec<Vector>,
    pub metrics: Vec<Metric>,
    pub sigmas: Vec<CovarianceOperator>,
    /// `max eigenvalue of Sigma_i`.
    pub cov_score: Vec<f64>,
    /// `|x_{i+1} - x_i|_{G_i} - |x_i - x_{i-1}|_{G_i}`.
    pub spacing_mismatch: Vec<f64>,
    pub climbing: Option<usize>,
}

fn spring_lengths(band: &Band, i: usize, metric: &Metric, metric_spring: bool) -> Result<(f64, f64)> {
    let fwd = &band.images[i + 1] - &band.images[i];
    let bwd = &band.images[i] - &band.images[i - 1];
    if metric_spring {
        Ok((metric.norm(&fwd)?, metric.norm(&bwd)?))
    } else {
        Ok((fwd.norm(), bwd.norm()))
    }
}

/// Assemble the band forces of `variant` from this iteration's samples.
///
/// Updates the cached energies, tangents and climbing index of `band`.
pub fn ua_neb_forces(
    band: &mut Band,
    samples: &BandSamples,
    variant: &dyn NebVariant,
    params: &NebParams,
    k: usize,
) -> Result<BandForces> {
    let n = band.n_interior();
    if samples.samples.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: samples.samples.len() });
    }
    for (j, s) in samples.samples.iter().enumerate() {
        band.energies[j + 1] = s.mean_energy;
    }
    let omega = params.omega(k);
    for i in band.interior() {
        hj_tangent(band, i, omega)?;
    }
    band.climbing = params.climbing_at(k).then(|| band.highest_image());
    let mp = params.metric_params();
    let mut out = BandForces {
        forces: Vec::with_capacity(n),
        normal: Vec::with_capacity(n),
        metrics: Vec::with_capacity(n),
        sigmas: Vec::with_capacity(n),
        cov_score: Vec::with_capacity(n),
        spacing_mismatch: Vec::with_capacity(n),
        climbing: band.climbing,
    };
    for i in band.interior() {
        let s = &samples.samples[i - 1];
        let metric = variant.metric(&s.sigma, &mp)?;
        let tau = &band.tangents[i];
        let proj = ObliqueProjector::new(&metric, tau, params.epsilon)?;
        let g_hat = -&s.force;
        let gg = metric.apply(&g_hat)?;
        let r = proj.perp(&gg);
        let (fwd, bwd) = spring_lengths(band, i, &metric, true)?;
        let force = if band.climbing == Some(i) {
            -&gg + proj.par(&gg) * 2.0
        } else {
            let spring = if variant.metric_spring() {
                tau * (params.k_s * (fwd - bwd) / proj.t_g_t.sqrt())
            } else {
                let (f, b) = spring_lengths(band, i, &metric, false)?;
                tau * (params.k_s * (f - b))
            };
            -&r + spring
        };
        out.forces.push(force);
        out.normal.push(r);
        out.cov_score.push(s.sigma.max_eigenvalue());
        out.sigmas.push(s.sigma.clone());
        out.spacing_mismatch.push(fwd - bwd);
        out.metrics.push(metric);
    }
    Ok(out)
}

/// Outcome of one band update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    /// Global factor applied to keep every image step within the trust radius.
    pub scale: f64,
    pub max_step: f64,
    pub reparametrized: bool,
}

/// The raw steps `alpha (F_i - gamma_k q_i)` with frozen components zeroed.
pub fn raw_steps(
    forces: &[Vector],
    penalty: Option<&[Vector]>,
    params: &NebParams,
    k: usize,
    mask: Option<&[bool]>,
) -> Result<Vec<Vector>> {
    let gamma = params.gamma(k);
    let mut steps = Vec::with_capacity(forces.len());
    for (j, f) in forces.iter().enumerate() {
        let mut s = f * params.alpha;
        if let Some(q) = penalty {
            if gamma > 0.0 {
                s -= &q[j] * (params.alpha * gamma);
            }
        }
        if let Some(mask) = mask {
            for (x, &free) in s.iter_mut().zip(mask) {
                if !free {
                    *x = 0.0;
                }
            }
        }
        if !all_finite(&s) {
            return Err(Error::NonFinite("band step"));
        }
        steps.push(s);
    }
    Ok(steps)
}

/// Global trust-radius cap: scale all steps so `max_i |s_i| <= radius`.
pub fn cap_steps(steps: &mut [Vector], radius: f64) -> (f64, f64) {
    let max = steps.iter().map(|s| s.norm()).fold(0.0, f64::max);
    let scale = if max > radius { radius / max } else { 1.0 };
    if scale < 1.0 {
        steps.iter_mut().for_each(|s| *s *= scale);
    }
    (scale, max * scale)
}

/// Apply `x_i += alpha (F_i - gamma_k q_i)` under the global trust cap, then
/// reparametrise on schedule.
pub fn neb_step(
    band: &mut Band,
    forces: &[Vector],
    penalty: Option<&[Vector]>,
    params: &NebParams,
    k: usize,
    mask: Option<&[bool]>,
) -> Result<StepInfo> {
    let mut steps = raw_steps(forces, penalty, params, k, mask)?;
    let (scale, max_step) = cap_steps(&mut steps, params.trust_radius);
    for (j, s) in steps.iter().enumerate() {
        band.images[j + 1] += s;
    }
    let reparametrized = params.reparam_interval > 0 && (k + 1) % params.reparam_interval == 0;
    if reparametrized {
        band.reparametrize();
    }
    Ok(StepInfo { scale, max_step, reparametrized })
}

/// Metrics of `variant` at the current interior images.
pub fn band_metrics(
    band: &Band,
    field: &dyn CovarianceField,
    variant: &dyn NebVariant,
    params: &NebParams,
) -> Result<Vec<Metric>> {
    let mp = params.metric_params();
    band.interior().map(|i| variant.metric(&field.sigma_at(&band.images[i])?, &mp)).collect()
}

/// Squared band residual with the deterministic mean gradient:
/// `sum_i |Q_perp G_i grad E(x_i)|^2 + rho_s sum_i (|d+|_{G_i} - |d-|_{G_i})^2`.
///
/// Energies and raw tangents are recomputed from the mean potential. A
/// climbing image contributes its tangential term `|Q_par G grad E|^2` instead
/// of a spring term.
pub fn neb_residual(band: &Band, mean: &dyn PotentialField, metrics: &[Metric], params: &NebParams) -> Result<f64> {
    let mut b = band.clone();
    b.smoothed.iter_mut().for_each(|s| *s = None);
    let mut grads = vec![Vector::zeros(b.dim()); b.images.len()];
    for (i, x) in b.images.iter().enumerate() {
        let (e, g) = mean.energy_gradient(x)?;
        b.energies[i] = e;
        grads[i] = g;
    }
    let mut total = 0.0;
    for i in b.interior() {
        let metric = &metrics[i - 1];
        let tau = hj_tangent(&mut b, i, 0.0)?;
        let proj = ObliqueProjector::new(metric, &tau, params.epsilon)?;
        let gg = metric.apply(&grads[i])?;
        total += proj.perp(&gg).norm_squared();
        if b.climbing == Some(i) {
            total += proj.par(&gg).norm_squared();
        } else {
            let (f, bw) = spring_lengths(&b, i, metric, true)?;
            total += params.rho_s * (f - bw).powi(2);
        }
    }
    Ok(total)
}

/// Which parts of the stopping rule passed.
#[derive(Clone, Debug, PartialEq)]
pub struct StopDecision {
    pub stop: bool,
    pub force_ok: bool,
    pub spring_ok: bool,
    pub uncertainty_ok: bool,
    /// Maximum covariance score `max_i lambda_max(Sigma_i) <= eta_var`.
    pub covariance_ok: bool,
    pub max_force: f64,
    pub max_spring: f64,
    pub max_uncertainty: f64,
    pub max_covariance: f64,
}

/// Covariance-aware stopping rule on the last assembled forces.
pub fn check_stop_neb(forces: &BandForces, params: &NebParams) -> Result<StopDecision> {
    let mut max_force: f64 = 0.0;
    let mut max_spring: f64 = 0.0;
    let mut max_unc: f64 = 0.0;
    for (j, r) in forces.normal.iter().enumerate() {
        max_force = max_force.max(r.norm());
        if forces.climbing != Some(j + 1) {
            max_spring = max_spring.max(forces.spacing_mismatch[j].abs());
        }
        let q = forces.sigmas[j].quadratic_form(r)?.max(0.0);
        max_unc = max_unc.max(q.sqrt() / (r.norm() + params.epsilon));
    }
    let max_cov = forces.cov_score.iter().copied().fold(0.0, f64::max);
    let force_ok = max_force <= params.eps_force;
    let spring_ok = max_spring <= params.eps_spring;
    let uncertainty_ok = max_unc <= params.eps_unc;
    let covariance_ok = max_cov <= params.eta_var;
    Ok(StopDecision {
        stop: force_ok && spring_ok && uncertainty_ok && covariance_ok,
        force_ok,
        spring_ok,
        uncertainty_ok,
        covariance_ok,
        max_force,
        max_spring,
        max_uncertainty: max_unc,
        max_covariance: max_cov,
    })
}

/// Which active-learning conditions fired, with the offending images (1-based).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriggerRecord {
    pub variance: bool,
    pub relative: bool,
    pub barrier: bool,
    pub variance_images: Vec<usize>,
    pub relative_images: Vec<usize>,
    pub max_eigenvalue: f64,
    pub max_ratio: f64,
}

impl TriggerRecord {
    pub fn fired(&self) -> bool {
        self.variance || self.relative || self.barrier
    }
}

/// Evaluate the three trigger conditions: covariance magnitude, directional
/// noise relative to the force, and barrier variance.
pub fn al_trigger_eval(
    forces: &[Vector],
    sigmas: &[CovarianceOperator],
    barrier_var: f64,
    params: &NebParams,
) -> Result<TriggerRecord> {
    let mut rec = TriggerRecord::default();
    for (j, (f, s)) in forces.iter().zip(sigmas).enumerate() {
        let lmax = s.max_eigenvalue();
        rec.max_eigenvalue = rec.max_eigenvalue.max(lmax);
        if lmax > params.eta_var {
            rec.variance = true;
            rec.variance_images.push(j + 1);
        }
        let fnorm = f.norm();
        let d = f / (fnorm + params.epsilon);
        let ratio = s.quadratic_form(&d)?.max(0.0).sqrt() / (fnorm + params.epsilon);
        rec.max_ratio = rec.max_ratio.max(ratio);
        if ratio > params.eta_rel {
            rec.relative = true;
            rec.relative_images.push(j + 1);
        }
    }
    rec.barrier = barrier_var > params.eta_bar * params.eta_bar;
    Ok(rec)
}

/// `Psi_lambda` summed over interior images, used by the trust-ratio merit.
pub fn band_logdet(band: &Band, field: &dyn CovarianceField, lambda: f64) -> Result<f64> {
    band.interior().map(|i| logdet(&field.sigma_at(&band.images[i])?, lambda)).sum()
}

/// `grad Psi_lambda(x_i)` at every interior image.
pub fn logdet_penalties(band: &Band, field: &dyn CovarianceField, lambda: f64) -> Result<Vec<Vector>> {
    band.interior().map(|i| crate::covariance::logdet_gradient(field, &band.images[i], lambda)).collect()
}
