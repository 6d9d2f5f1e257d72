use serde::{Deserialize, Serialize};

use crate::covariance::MetricParams;
use crate::error::{Error, Result};

/// Band-optimizer settings. Defaults are the 2D analytic benchmark values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NebParams {
    pub variant: String,
    /// Number of interior images.
    pub n_images: usize,
    pub k_s: f64,
    pub alpha: f64,
    pub trust_radius: f64,
    pub lambda: f64,
    /// `lambda` is stated for the covariance model before the force-noise
    /// multiplier `m`; the optimizer then regularises `m^2 Sigma` with
    /// `m^2 lambda`.
    pub lambda_model_units: bool,
    pub normalize_trace: bool,
    pub solve_tol: f64,
    /// Penalty schedule `gamma_k = gamma0 (1 + k / gamma_k0)^(-gamma_p)`.
    pub gamma0: f64,
    pub gamma_k0: f64,
    pub gamma_p: f64,
    /// Tangent relaxation `omega_k = omega0 (1 + k / omega_k0)^(-omega_p)`.
    pub omega0: f64,
    pub omega_k0: f64,
    pub omega_p: f64,
    /// Redistribute images every this many iterations (0 disables).
    pub reparam_interval: usize,
    /// Iteration from which the highest image climbs (`None` disables climbing).
    pub climb_start: Option<usize>,
    pub kappa_e: f64,
    pub eps_force: f64,
    pub eps_spring: f64,
    pub eps_unc: f64,
    pub eta_var: f64,
    pub eta_rel: f64,
    pub eta_bar: f64,
    pub rho_s: f64,
    pub epsilon: f64,
    /// Exact-force refresh baseline: every `refresh_interval` iterations the
    /// `refresh_count` images of largest `tr(Sigma)` get the mean force.
    pub refresh_interval: usize,
    pub refresh_count: usize,
    /// Stop early once the stopping rule passes.
    pub early_stop: bool,
    /// Trust-region ratio test instead of the plain global cap.
    pub trust_ratio: bool,
    pub rho_min: f64,
    pub mu_psi: f64,
}

impl Default for NebParams {
    fn default() -> Self {
        Self {
            variant: "ua".into(),
            n_images: 21,
            k_s: 2.0,
            alpha: 0.045,
            trust_radius: 0.028,
            lambda: 0.006,
            lambda_model_units: false,
            normalize_trace: true,
            solve_tol: 1e-10,
            gamma0: 0.004,
            gamma_k0: 180.0,
            gamma_p: 1.25,
            omega0: 0.0,
            omega_k0: 50.0,
            omega_p: 1.0,
            reparam_interval: 20,
            climb_start: Some(250),
            kappa_e: 0.0,
            eps_force: 1e-3,
            eps_spring: 1e-3,
            eps_unc: 1.0,
            eta_var: 1.0,
            eta_rel: 1.0,
            eta_bar: 0.1,
            rho_s: 1.0,
            epsilon: 1e-12,
            refresh_interval: 25,
            refresh_count: 2,
            early_stop: false,
            trust_ratio: false,
            rho_min: 0.1,
            mu_psi: 0.0,
        }
    }
}

impl NebParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_images == 0 {
            return bad("n_images must be at least 1");
        }
        if !(self.k_s > 0.0) {
            return bad("k_s must be positive");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.trust_radius > 0.0) {
            return bad("trust_radius must be positive");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.solve_tol > 0.0 && self.solve_tol <= 1e-2) {
            return bad("solve_tol must lie in (0, 1e-2]");
        }
        if self.gamma0 < 0.0 || self.gamma_k0 <= 0.0 {
            return bad("penalty schedule needs gamma0 >= 0 and gamma_k0 > 0");
        }
        if !(0.0..1.0).contains(&self.omega0) || self.omega_k0 <= 0.0 {
            return bad("tangent relaxation needs 0 <= omega0 < 1 and omega_k0 > 0");
        }
        if self.epsilon <= 0.0 || self.rho_s < 0.0 {
            return bad("epsilon must be positive and rho_s nonnegative");
        }
        Ok(())
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 * (1.0 + k as f64 / self.gamma_k0).powf(-self.gamma_p)
    }

    pub fn omega(&self, k: usize) -> f64 {
        self.omega0 * (1.0 + k as f64 / self.omega_k0).powf(-self.omega_p)
    }

    /// The settings as seen by an optimizer whose oracle uses noise
    /// multiplier `m`.
    pub fn scaled_for(&self, noise_multiplier: f64) -> NebParams {
        let mut p = self.clone();
        if self.lambda_model_units && noise_multiplier > 0.0 {
            p.lambda *= noise_multiplier * noise_multiplier;
        }
        p
    }

    pub fn metric_params(&self) -> MetricParams {
        MetricParams {
            lambda: self.lambda,
            solve_tol: self.solve_tol,
            normalize_trace: self.normalize_trace,
            ..MetricParams::default()
        }
    }

    pub fn climbing_at(&self, k: usize) -> bool {
        self.climb_start.is_some_and(|s| k >= s)
    }
}
