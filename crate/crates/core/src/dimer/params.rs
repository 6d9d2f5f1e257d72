use serde::{Deserialize, Serialize};

use crate::covariance::MetricParams;
use crate::error::{Error, Result};

/// Dimer settings. Defaults are the 2D dimer benchmark values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimerParams {
    pub variant: String,
    /// Translation step.
    pub alpha: f64,
    /// Rotation step.
    pub beta: f64,
    /// Translation trust radius.
    pub trust_radius: f64,
    /// Trust angle of one rotation (radians).
    pub theta_max: f64,
    /// Force-metric regularisation.
    pub lambda: f64,
    /// Rotation-metric regularisation on the tangent space of `v`.
    pub lambda_h: f64,
    /// Both regularisers are stated for the covariance model before the
    /// force-noise multiplier (see `NebParams::lambda_model_units`).
    pub lambda_model_units: bool,
    /// Dimer length.
    pub h: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// HVP-noise ratio bound; `None` keeps `h` fixed.
    pub eta_h: Option<f64>,
    /// Handoff signal-to-noise threshold.
    pub eta_hand: f64,
    pub epsilon: f64,
    /// Rescale the translation metric to `trace(G) = d`.
    pub normalize_trace: bool,
    /// Rescale the rotation metric to trace `d - 1` on the tangent space.
    pub normalize_rotation: bool,
    pub solve_tol: f64,
    /// Optional transient log-det penalty `gamma0 (1 + k / gamma_k0)^(-gamma_p)`.
    pub gamma0: f64,
    pub gamma_k0: f64,
    pub gamma_p: f64,
}

impl Default for DimerParams {
    fn default() -> Self {
        Self {
            variant: "ua".into(),
            alpha: 0.035,
            beta: 0.018,
            trust_radius: 0.035,
            theta_max: 0.18,
            lambda: 0.018,
            lambda_h: 0.030,
            lambda_model_units: false,
            h: 0.055,
            h_min: 1e-3,
            h_max: 0.5,
            eta_h: None,
            eta_hand: 1.0,
            epsilon: 1e-12,
            normalize_trace: true,
            normalize_rotation: false,
            solve_tol: 1e-10,
            gamma0: 0.0,
            gamma_k0: 180.0,
            gamma_p: 1.25,
        }
    }
}

impl DimerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("trust_radius", self.trust_radius),
            ("theta_max", self.theta_max),
            ("lambda", self.lambda),
            ("lambda_h", self.lambda_h),
            ("h", self.h),
            ("h_min", self.h_min),
            ("h_max", self.h_max),
            ("eta_hand", self.eta_hand),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.theta_max > std::f64::consts::FRAC_PI_2 {
            return bad("theta_max must not exceed pi/2");
        }
        if !(self.h_min <= self.h && self.h <= self.h_max) {
            return bad("dimer length must satisfy h_min <= h <= h_max");
        }
        if let Some(eta) = self.eta_h {
            if !(eta > 0.0) {
                return bad("eta_h must be positive");
            }
        }
        if self.gamma0 < 0.0 || self.gamma_k0 <= 0.0 {
            return bad("penalty schedule needs gamma0 >= 0 and gamma_k0 > 0");
        }
        Ok(())
    }

    /// Rotational-to-translational step ratio.
    pub fn rho_beta(&self) -> f64 {
        self.beta / self.alpha
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.gamma0 * (1.0 + k as f64 / self.gamma_k0).powf(-self.gamma_p)
    }

    /// The settings as seen by an optimizer whose oracle uses noise multiplier `m`.
    pub fn scaled_for(&self, noise_multiplier: f64) -> DimerParams {
        let mut p = self.clone();
        if self.lambda_model_units && noise_multiplier > 0.0 {
            let m2 = noise_multiplier * noise_multiplier;
            p.lambda *= m2;
            p.lambda_h *= m2;
        }
        p
    }

    pub fn metric_params(&self) -> MetricParams {
        MetricParams {
            lambda: self.lambda,
            lambda_h: self.lambda_h,
            solve_tol: self.solve_tol,
            normalize_trace: self.normalize_trace,
            ..MetricParams::default()
        }
    }
}
