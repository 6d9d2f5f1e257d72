use crate::covariance::{CovarianceOperator, Metric};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite, cholesky, householder_complement, Matrix, Vector};
use crate::potentials::PotentialField;

use super::params::DimerParams;

/// Center, unit direction, dimer length and translation trust radius.
#[derive(Clone, Debug, PartialEq)]
pub struct DimerState {
    pub x: Vector,
    pub v: Vector,
    pub h: f64,
    pub trust_radius: f64,
    pub iteration: usize,
}

impl DimerState {
    /// Normalises `v`.
    pub fn new(x: Vector, v: Vector, params: &DimerParams) -> Result<Self> {
        check_dim(x.len(), v.len())?;
        let n = v.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidParameter("dimer direction must be nonzero".into()));
        }
        Ok(Self { x, v: v / n, h: params.h, trust_radius: params.trust_radius, iteration: 0 })
    }
}

/// `P_v z = z - v (v^T z)`.
pub fn tangent_part(v: &Vector, z: &Vector) -> Vector {
    z - v * v.dot(z)
}

/// `tr(P_v Sigma P_v) = tr(Sigma) - v^T Sigma v`.
pub fn tangent_trace(v: &Vector, sigma: &CovarianceOperator) -> Result<f64> {
    Ok(sigma.trace() - sigma.quadratic_form(v)?)
}

/// HVP-noise ratio `tr(P_v Sigma_Hv P_v) / (|P_v Hv|^2 + eps)`.
pub fn hvp_noise_ratio(v: &Vector, hv: &Vector, sigma_hv: &CovarianceOperator, epsilon: f64) -> Result<f64> {
    Ok(tangent_trace(v, sigma_hv)?.max(0.0) / (tangent_part(v, hv).norm_squared() + epsilon))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LengthDecision {
    pub h: f64,
    /// The ratio stays above `eta_h` even at `h_max`: rotate with `P_v`.
    pub fallback: bool,
    /// Ratio at the current length.
    pub ratio: f64,
}

/// Keep `h` while the HVP-noise ratio is within `eta_h`; otherwise double it
/// (up to `h_max`), predicting the ratio with `Sigma_Hv ~ h^-2` at frozen
/// endpoint covariance.
pub fn adapt_dimer_length(
    state: &DimerState,
    hv: &Vector,
    sigma_hv: &CovarianceOperator,
    params: &DimerParams,
) -> Result<LengthDecision> {
    let noise = tangent_trace(&state.v, sigma_hv)?.max(0.0);
    let signal = tangent_part(&state.v, hv).norm_squared() + params.epsilon;
    let ratio = noise / signal;
    let Some(eta) = params.eta_h else {
        return Ok(LengthDecision { h: state.h, fallback: false, ratio });
    };
    if ratio <= eta {
        return Ok(LengthDecision { h: state.h, fallback: false, ratio });
    }
    let mut h = state.h;
    while h < params.h_max {
        h = (2.0 * h).min(params.h_max);
        if noise * (state.h / h).powi(2) / signal <= eta {
            return Ok(LengthDecision { h, fallback: false, ratio });
        }
    }
    Ok(LengthDecision { h: params.h_max, fallback: true, ratio })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationStep {
    pub v: Vector,
    /// Angle between the old and new direction.
    pub angle: f64,
    pub capped: bool,
}

/// The tangent-space preconditioner `C_v = (P_v Sigma_Hv P_v + lambda_H P_v)^+`
/// applied to `r` (a tangent vector), solved in the Householder basis of `v`.
pub fn rotation_metric_apply(
    v: &Vector,
    sigma_hv: &CovarianceOperator,
    r: &Vector,
    params: &DimerParams,
) -> Result<Vector> {
    let d = v.len();
    if d < 2 {
        return Ok(Vector::zeros(d));
    }
    let basis = householder_complement(v);
    let mut sb = Matrix::zeros(d, d - 1);
    for j in 0..d - 1 {
        sb.set_column(j, &sigma_hv.apply(&basis.column(j).into_owned())?);
    }
    let mut s = basis.transpose() * sb;
    s = (&s + s.transpose()) * 0.5;
    for j in 0..d - 1 {
        s[(j, j)] += params.lambda_h;
    }
    let ch = cholesky(s)?;
    let mut y = ch.solve(&(basis.transpose() * r));
    if params.normalize_rotation {
        let tr = ch.inverse().trace();
        y *= (d - 1) as f64 / tr;
    }
    Ok(basis * y)
}

/// Retracted rotation `v <- (v + dv) / |v + dv|` with
/// `dv = -beta C_v P_v Hv` (or `-beta P_v Hv` when unweighted), capped at the
/// trust angle.
pub fn dimer_rotate(
    v: &Vector,
    hv: &Vector,
    sigma_hv: Option<&CovarianceOperator>,
    params: &DimerParams,
) -> Result<RotationStep> {
    check_dim(v.len(), hv.len())?;
    let r = tangent_part(v, hv);
    let mut dv = match sigma_hv {
        Some(s) => rotation_metric_apply(v, s, &r, params)? * -params.beta,
        None => &r * -params.beta,
    };
    // keep the update exactly tangent before the retraction
    dv = tangent_part(v, &dv);
    let mut capped = false;
    let n = dv.norm();
    if n.atan() > params.theta_max {
        dv *= params.theta_max.tan() / n;
        capped = true;
    }
    let w = v + &dv;
    let v_new = &w / w.norm();
    if !all_finite(&v_new) {
        return Err(Error::NonFinite("dimer rotation"));
    }
    let angle = v.dot(&v_new).clamp(-1.0, 1.0).acos();
    Ok(RotationStep { v: v_new, angle, capped })
}

/// Reflected gradient `-g + 2 v v^T g`.
pub fn reflect(v: &Vector, g: &Vector) -> Vector {
    -g + v * (2.0 * v.dot(g))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationStep {
    pub x: Vector,
    pub step: f64,
    pub capped: bool,
}

/// `x <- x + alpha G [-g + 2 v v^T g] - alpha gamma q`, scaled to the trust radius.
pub fn dimer_translate(
    x: &Vector,
    v: &Vector,
    g_hat: &Vector,
    metric: &Metric,
    penalty: Option<(&Vector, f64)>,
    params: &DimerParams,
    trust_radius: f64,
) -> Result<TranslationStep> {
    let mut s = metric.apply(&reflect(v, g_hat))? * params.alpha;
    if let Some((q, gamma)) = penalty {
        s -= q * (params.alpha * gamma);
    }
    if !all_finite(&s) {
        return Err(Error::NonFinite("dimer translation"));
    }
    let n = s.norm();
    let capped = n > trust_radius;
    if capped {
        s *= trust_radius / n;
    }
    Ok(TranslationStep { x: x + &s, step: n.min(trust_radius), capped })
}

/// `|R_v grad E(x)|` with the mean gradient.
pub fn reflected_gradient_residual(x: &Vector, v: &Vector, mean: &dyn PotentialField) -> Result<f64> {
    Ok(reflect(v, &mean.gradient(x)?).norm())
}

/// `|P_v H v|^2 + |R_v grad E|^2` with `Hv` from a central difference (step
/// 1e-5) of the mean gradient.
pub fn dimer_residual(x: &Vector, v: &Vector, mean: &dyn PotentialField) -> Result<f64> {
    let eps = 1e-5;
    let hv = (mean.gradient(&(x + v * eps))? - mean.gradient(&(x - v * eps))?) / (2.0 * eps);
    let g = mean.gradient(x)?;
    Ok(tangent_part(v, &hv).norm_squared() + reflect(v, &g).norm_squared())
}
