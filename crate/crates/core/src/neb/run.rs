use std::sync::Arc;

use crate::error::Result;
use crate::potentials::{CovarianceField, ScaledField, StochasticForceOracle};

use super::band::Band;
use super::forces::{
    band_logdet, band_metrics, cap_steps, check_stop_neb, logdet_penalties, neb_residual, neb_step, raw_steps,
    sample_band, ua_neb_forces, StopDecision,
};
use super::params::NebParams;
use super::variants::NebVariant;

/// What to record during a band run.
#[derive(Clone, Debug, Default)]
pub struct NebRunConfig {
    pub iterations: usize,
    /// Mean-potential residual after every iteration (extra diagnostic evaluations).
    pub record_residual: bool,
    /// Fingerprints of the noise draws consumed per image.
    pub record_digests: bool,
}

#[derive(Clone, Debug, Default)]
pub struct NebTrace {
    /// Barrier `max_i E(x_i) - E(a)` of the band after `k` iterations, `k = 0..=K`.
    pub barrier: Vec<f64>,
    /// Band residual after `k` iterations, when recorded.
    pub residual: Vec<f64>,
    /// Oracle calls consumed in each iteration.
    pub calls: Vec<u64>,
    pub digests: Vec<Vec<u64>>,
    /// `(iteration, images)` pairs of exact-force refreshes.
    pub refreshed: Vec<(usize, Vec<usize>)>,
    pub trust_radius: Vec<f64>,
    /// Global trust-cap factor applied to the steps of each iteration.
    pub step_scale: Vec<f64>,
    pub last_stop: Option<StopDecision>,
    pub stopped_at: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct NebOutcome {
    pub band: Band,
    pub trace: NebTrace,
}

/// The covariance handed to the optimizer: `m^2 Sigma(x)`.
pub fn optimizer_field(oracle: &StochasticForceOracle) -> Arc<dyn CovarianceField> {
    Arc::new(ScaledField { inner: oracle.cov.clone(), factor: oracle.noise_multiplier.powi(2) })
}

/// Run the band optimizer for `cfg.iterations` iterations (or until the
/// stopping rule passes when `params.early_stop` is set).
pub fn run_neb(
    initial: &Band,
    oracle: &StochasticForceOracle,
    variant: &dyn NebVariant,
    params: &NebParams,
    cfg: &NebRunConfig,
) -> Result<NebOutcome> {
    params.validate()?;
    let params = &params.scaled_for(oracle.noise_multiplier);
    let mean = oracle.mean.as_ref();
    let field = optimizer_field(oracle);
    let penalty_field = variant.penalty_field(field.clone());
    let mask = oracle.mask.as_deref();
    let mut band = initial.clone();
    band.refresh_energies(mean)?;
    let mut trace = NebTrace::default();
    let mut radius = params.trust_radius;
    let residual_now = |b: &Band| -> Result<f64> {
        let metrics = band_metrics(b, field.as_ref(), variant, params)?;
        neb_residual(b, mean, &metrics, params)
    };
    if cfg.record_residual {
        trace.residual.push(residual_now(&band)?);
    }
    for k in 0..cfg.iterations {
        let before = oracle.calls();
        let samples = sample_band(&band, oracle, variant, params, k)?;
        trace.calls.push(oracle.calls() - before);
        if cfg.record_digests {
            trace.digests.push(samples.samples.iter().map(|s| s.noise_digest).collect());
        }
        if !samples.refreshed.is_empty() {
            trace.refreshed.push((k, samples.refreshed.clone()));
        }
        let forces = ua_neb_forces(&mut band, &samples, variant, params, k)?;
        trace.barrier.push(band.barrier());
        if params.early_stop && k > 0 {
            let decision = check_stop_neb(&forces, params)?;
            let stop = decision.stop;
            trace.last_stop = Some(decision);
            if stop {
                trace.stopped_at = Some(k);
                break;
            }
        }
        let penalty = match &penalty_field {
            Some(f) if params.gamma(k) > 0.0 => Some(logdet_penalties(&band, f.as_ref(), params.lambda)?),
            _ => None,
        };
        let scale = if params.trust_ratio {
            let (next, scale) =
                trust_ratio_step(&mut band, &forces.forces, penalty.as_deref(), params, k, radius, &field, &residual_now)?;
            radius = next;
            scale
        } else {
            neb_step(&mut band, &forces.forces, penalty.as_deref(), params, k, mask)?.scale
        };
        trace.step_scale.push(scale);
        trace.trust_radius.push(radius);
        if cfg.record_residual {
            trace.residual.push(residual_now(&band)?);
        }
    }
    band.refresh_energies(mean)?;
    if trace.stopped_at.is_none() {
        trace.barrier.push(band.barrier());
    }
    Ok(NebOutcome { band, trace })
}

/// One step under the ratio test on the merit `0.5 R + mu sum Psi`.
/// Returns the trust radius for the next iteration and the cap factor used.
#[allow(clippy::too_many_arguments)]
fn trust_ratio_step(
    band: &mut Band,
    forces: &[crate::linalg::Vector],
    penalty: Option<&[crate::linalg::Vector]>,
    params: &NebParams,
    k: usize,
    radius: f64,
    field: &Arc<dyn CovarianceField>,
    residual: &dyn Fn(&Band) -> Result<f64>,
) -> Result<(f64, f64)> {
    let merit = |b: &Band| -> Result<f64> {
        let psi = if params.mu_psi != 0.0 { band_logdet(b, field.as_ref(), params.lambda)? } else { 0.0 };
        Ok(0.5 * residual(b)? + params.mu_psi * psi)
    };
    let mut steps = raw_steps(forces, penalty, params, k, None)?;
    let (scale, _) = cap_steps(&mut steps, radius);
    let shifted = |t: f64| {
        let mut b = band.clone();
        for (j, s) in steps.iter().enumerate() {
            b.images[j + 1] += s * t;
        }
        b
    };
    let h = 1e-3;
    let predicted = -(merit(&shifted(h))? - merit(&shifted(-h))?) / (2.0 * h);
    let mut next = radius;
    let accept = if predicted <= 0.0 {
        false
    } else {
        let rho = (merit(band)? - merit(&shifted(1.0))?) / (predicted + params.epsilon);
        if rho > 0.75 {
            next = (radius * 1.5).min(params.trust_radius * 10.0);
        }
        rho > params.rho_min
    };
    if accept {
        *band = shifted(1.0);
    } else {
        next = radius * 0.5;
    }
    if params.reparam_interval > 0 && (k + 1) % params.reparam_interval == 0 {
        band.reparametrize();
    }
    Ok((next, scale))
}
