use crate::covariance::logdet_gradient;
use crate::error::Result;
use crate::neb::optimizer_field;
use crate::potentials::StochasticForceOracle;
use crate::rng::entity;

use super::hvp::hvp_estimate;
use super::params::DimerParams;
use super::steps::{adapt_dimer_length, dimer_rotate, dimer_translate, reflected_gradient_residual, DimerState};
use super::variants::DimerVariant;

#[derive(Clone, Debug, Default)]
pub struct DimerRunConfig {
    pub iterations: usize,
    pub record_digests: bool,
}

#[derive(Clone, Debug, Default)]
pub struct DimerTrace {
    /// `|R_v grad E(x)|` of the mean potential after `k` iterations, `k = 0..=K`.
    pub reflected: Vec<f64>,
    /// Oracle calls consumed in each iteration.
    pub calls: Vec<u64>,
    /// Rotation angle of each iteration.
    pub angles: Vec<f64>,
    /// Iterations whose rotation fell back to the unweighted projector.
    pub fallbacks: Vec<usize>,
    /// Dimer length used in each iteration.
    pub lengths: Vec<f64>,
    /// Translation length of each iteration.
    pub steps: Vec<f64>,
    /// Noise fingerprints `(plus, minus, center)` per iteration.
    pub digests: Vec<[u64; 3]>,
}

#[derive(Clone, Debug)]
pub struct DimerOutcome {
    pub state: DimerState,
    pub trace: DimerTrace,
}

/// Rotate, then translate with the rotated direction, for `cfg.iterations`
/// iterations. Iteration `k` draws its endpoint and center noise from the
/// streams `(seed, k, DIMER_PLUS | DIMER_MINUS | DIMER_CENTER)`, so variants
/// run on one seed see identical draws. A length change requested by the
/// HVP-noise test takes effect from the next iteration.
pub fn run_dimer(
    initial: &DimerState,
    oracle: &StochasticForceOracle,
    variant: &dyn DimerVariant,
    params: &DimerParams,
    cfg: &DimerRunConfig,
) -> Result<DimerOutcome> {
    params.validate()?;
    let params = &params.scaled_for(oracle.noise_multiplier);
    let mean = oracle.mean.as_ref();
    let metric_params = params.metric_params();
    let penalty_field = if variant.uses_penalty() && params.gamma0 > 0.0 { Some(optimizer_field(oracle)) } else { None };
    let mut state = initial.clone();
    let mut trace = DimerTrace::default();
    trace.reflected.push(reflected_gradient_residual(&state.x, &state.v, mean)?);
    for k in 0..cfg.iterations {
        let before = oracle.calls();
        let it = k as u64;
        let keys = (oracle.key(it, entity::DIMER_PLUS), oracle.key(it, entity::DIMER_MINUS));
        let est = hvp_estimate(oracle, &state.x, &state.v, state.h, keys, None)?;
        trace.lengths.push(state.h);

        let decision = adapt_dimer_length(&state, &est.hv, &est.sigma_hv, params)?;
        if decision.fallback {
            trace.fallbacks.push(k);
        }
        let weight = (variant.weighted_rotation() && !decision.fallback).then_some(&est.sigma_hv);
        let rot = dimer_rotate(&state.v, &est.hv, weight, params)?;
        trace.angles.push(rot.angle);
        state.v = rot.v;
        state.h = decision.h.clamp(params.h_min, params.h_max);

        let center = oracle.sample_force(&state.x, oracle.key(it, entity::DIMER_CENTER))?;
        let metric = variant.metric(&center.sigma, &metric_params)?;
        let gamma = params.gamma(k);
        let q = match &penalty_field {
            Some(f) if gamma > 0.0 => Some(logdet_gradient(f.as_ref(), &state.x, params.lambda)?),
            _ => None,
        };
        let g_hat = -&center.force;
        let step = dimer_translate(&state.x, &state.v, &g_hat, &metric, q.as_ref().map(|q| (q, gamma)), params, state.trust_radius)?;
        let mut x = step.x;
        oracle.apply_mask(&mut x);
        state.x = x;
        state.iteration += 1;
        trace.steps.push(step.step);
        trace.calls.push(oracle.calls() - before);
        if cfg.record_digests {
            trace.digests.push([est.plus.noise_digest, est.minus.noise_digest, center.noise_digest]);
        }
        trace.reflected.push(reflected_gradient_residual(&state.x, &state.v, mean)?);
    }
    Ok(DimerOutcome { state, trace })
}
