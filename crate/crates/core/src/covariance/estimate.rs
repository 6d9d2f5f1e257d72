use super::metric::MetricParams;
use super::operator::{logdet, CovarianceOperator};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky, Matrix, Vector};
use crate::potentials::CovarianceField;

/// Sparsity pattern for the shrinkage target: entry `(i, j)` survives iff `i == j`
/// or some group contains both indices.
#[derive(Clone, Debug, Default)]
pub struct BlockPattern {
    pub groups: Vec<Vec<usize>>,
}

impl BlockPattern {
    /// Consecutive groups of `size` coordinates, e.g. atomwise 3x3 blocks.
    pub fn contiguous(dim: usize, size: usize) -> Self {
        let groups = (0..dim).step_by(size.max(1)).map(|s| (s..(s + size).min(dim)).collect()).collect();
        Self { groups }
    }

    fn mask(&self, dim: usize) -> Matrix {
        let mut m = Matrix::identity(dim, dim);
        for g in &self.groups {
            for &i in g {
                for &j in g {
                    if i < dim && j < dim {
                        m[(i, j)] = 1.0;
                    }
                }
            }
        }
        m
    }
}

/// Calibrated, optionally shrunk ensemble covariance
/// `s_cal^2 [(1 - rho) S + rho Pi_B S] + sigma_floor^2 I` as a dense operator.
pub fn ensemble_covariance(
    samples: &[Vector],
    params: &MetricParams,
    pattern: Option<&BlockPattern>,
) -> Result<CovarianceOperator> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!("ensemble covariance needs M >= 2 samples, got {m}")));
    }
    let d = samples[0].len();
    for s in samples {
        check_dim(d, s.len())?;
    }
    let mean = samples.iter().fold(Vector::zeros(d), |acc, s| acc + s) / m as f64;
    let mut raw = Matrix::zeros(d, d);
    for s in samples {
        let c = s - &mean;
        raw.ger(1.0, &c, &c, 1.0);
    }
    raw /= (m - 1) as f64;

    let mask = match pattern {
        Some(p) => p.mask(d),
        None => Matrix::identity(d, d),
    };
    let rho = params.shrink_rho;
    let projected = raw.component_mul(&mask);
    let mut out = (raw * (1.0 - rho) + projected * rho) * params.s_cal.powi(2);
    for i in 0..d {
        out[(i, i)] += params.sigma_floor.powi(2);
    }
    // symmetrise against round-off
    let out = (&out + out.transpose()) * 0.5;
    Ok(CovarianceOperator::Dense(out))
}

const LOG_S2_MIN: f64 = -13.815510557964274; // ln 1e-6
const LOG_S2_MAX: f64 = 13.815510557964274; // ln 1e6

fn calibration_nll(t: f64, residuals: &[Vector], raw: &[Matrix], floor2: f64) -> f64 {
    let s2 = t.exp();
    let mut total = 0.0;
    for (r, s) in residuals.iter().zip(raw) {
        let d = r.len();
        let m = s * s2 + Matrix::identity(d, d) * floor2;
        let Ok(ch) = cholesky(m) else {
            return f64::INFINITY;
        };
        let ld = 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        total += ld + r.dot(&ch.solve(r));
    }
    total
}

/// Scalar NLL calibration factor `s_cal` (not squared).
///
/// Golden-section search over `log s^2` on `[ln 1e-6, ln 1e6]` to a bracket
/// width of 1e-8.
pub fn calibrate_nll(residuals: &[Vector], raw_covs: &[CovarianceOperator], sigma_floor: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::InsufficientData("calibration needs at least one residual".into()));
    }
    if residuals.len() != raw_covs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} residuals but {} covariances",
            residuals.len(),
            raw_covs.len()
        )));
    }
    for (r, c) in residuals.iter().zip(raw_covs) {
        check_dim(c.dim(), r.len())?;
    }
    let raw: Vec<Matrix> = raw_covs.iter().map(|c| c.to_dense()).collect();
    let floor2 = sigma_floor * sigma_floor;
    let f = |t: f64| calibration_nll(t, residuals, &raw, floor2);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (LOG_S2_MIN, LOG_S2_MAX);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-8 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok((0.5 * (a + b)).exp().sqrt())
}

/// Sample variance over members of the centred-difference directional force
/// `-(E_m(x + eps u) - E_m(x - eps u)) / (2 eps)`.
pub fn directional_variance_from_energies<F>(member_energies: F, x: &Vector, u: &Vector, eps: f64) -> Result<f64>
where
    F: Fn(&Vector) -> Vec<f64>,
{
    check_dim(x.len(), u.len())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    if (u.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidParameter("direction must be a unit vector".into()));
    }
    let plus = member_energies(&(x + u * eps));
    let minus = member_energies(&(x - u * eps));
    if plus.len() != minus.len() {
        return Err(Error::InvalidParameter("member count changed between evaluations".into()));
    }
    let m = plus.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!("need at least two members, got {m}")));
    }
    let forces: Vec<f64> = plus.iter().zip(&minus).map(|(p, q)| -(p - q) / (2.0 * eps)).collect();
    let mean = forces.iter().sum::<f64>() / m as f64;
    Ok(forces.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (m - 1) as f64)
}

/// `u^T grad Psi_lambda(x)` for `Psi_lambda = log det(Sigma(x) + lambda I)` by a
/// central difference with step `1e-5 max(1, |x|)`.
pub fn logdet_grad_dir(field: &dyn CovarianceField, x: &Vector, u: &Vector, lambda: f64) -> Result<f64> {
    check_dim(x.len(), u.len())?;
    let eps = 1e-5 * x.norm().max(1.0);
    let plus = logdet(&field.sigma_at(&(x + u * eps))?, lambda)?;
    let minus = logdet(&field.sigma_at(&(x - u * eps))?, lambda)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Full gradient of `Psi_lambda` from `d` coordinate directional derivatives.
pub fn logdet_gradient(field: &dyn CovarianceField, x: &Vector, lambda: f64) -> Result<Vector> {
    let d = x.len();
    let mut g = Vector::zeros(d);
    let mut e = Vector::zeros(d);
    for j in 0..d {
        e[j] = 1.0;
        g[j] = logdet_grad_dir(field, x, &e, lambda)?;
        e[j] = 0.0;
    }
    Ok(g)
}
