use crate::covariance::{ensemble_covariance, CovarianceOperator, MetricParams};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::potentials::{ForceSample, StochasticForceOracle};
use crate::rng::StreamKey;

/// A paired Hessian-vector estimate and its covariance.
#[derive(Clone, Debug)]
pub struct HvpEstimate {
    pub hv: Vector,
    pub sigma_hv: CovarianceOperator,
    pub plus: ForceSample,
    pub minus: ForceSample,
}

fn check_length(h: f64) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("dimer length must be positive, got {h}")));
    }
    Ok(())
}

/// `(Sigma_+ + Sigma_- - C - C^T) / (4 h^2)`, kept diagonal when possible.
pub fn hvp_covariance(
    plus: &CovarianceOperator,
    minus: &CovarianceOperator,
    cross: Option<&Matrix>,
    h: f64,
) -> Result<CovarianceOperator> {
    check_length(h)?;
    check_dim(plus.dim(), minus.dim())?;
    let w = 1.0 / (4.0 * h * h);
    if let (CovarianceOperator::Diagonal(a), CovarianceOperator::Diagonal(b), None) = (plus, minus, cross) {
        return Ok(CovarianceOperator::Diagonal((a + b) * w));
    }
    let mut m = plus.to_dense() + minus.to_dense();
    if let Some(c) = cross {
        check_dim(m.nrows(), c.nrows())?;
        m -= c + c.transpose();
    }
    Ok(CovarianceOperator::Dense(m * w))
}

/// Centered force difference `Hv = -(F(x + h v) - F(x - h v)) / (2h)` from one
/// oracle call on each side, with covariance under independent endpoint
/// noise. A supplied cross-covariance of the paired errors is subtracted.
pub fn hvp_estimate(
    oracle: &StochasticForceOracle,
    x: &Vector,
    v: &Vector,
    h: f64,
    keys: (StreamKey, StreamKey),
    cross: Option<&Matrix>,
) -> Result<HvpEstimate> {
    check_length(h)?;
    check_dim(x.len(), v.len())?;
    let plus = oracle.sample_force(&(x + v * h), keys.0)?;
    let minus = oracle.sample_force(&(x - v * h), keys.1)?;
    let hv = -(&plus.force - &minus.force) / (2.0 * h);
    let sigma_hv = hvp_covariance(&plus.sigma, &minus.sigma, cross, h)?;
    Ok(HvpEstimate { hv, sigma_hv, plus, minus })
}

/// Member route: per-member products `-(F_m(x + hv) - F_m(x - hv)) / (2h)`,
/// their mean, and the calibrated sample covariance
/// `s_h^2 S + sigma_floor^2 I`.
pub fn hvp_from_members(
    plus: &[Vector],
    minus: &[Vector],
    h: f64,
    s_h: f64,
    sigma_floor: f64,
) -> Result<(Vector, CovarianceOperator)> {
    check_length(h)?;
    if plus.len() != minus.len() {
        return Err(Error::DimensionMismatch { expected: plus.len(), got: minus.len() });
    }
    let members: Vec<Vector> = plus.iter().zip(minus).map(|(p, m)| -(p - m) / (2.0 * h)).collect();
    let params = MetricParams { s_cal: s_h, sigma_floor, ..MetricParams::default() };
    let sigma = ensemble_covariance(&members, &params, None)?;
    let mean = members.iter().fold(Vector::zeros(members[0].len()), |acc, m| acc + m) / members.len() as f64;
    Ok((mean, sigma))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::potentials::{AnalyticDoubleWell, ConstantField, QuadraticDemo};
    use crate::rng::entity;

    fn oracle_for(mean: Arc<dyn crate::potentials::PotentialField>, sigma: Matrix, m: f64) -> StochasticForceOracle {
        StochasticForceOracle::new(mean, Arc::new(ConstantField(CovarianceOperator::Dense(sigma))), m, 3)
    }

    fn keys(o: &StochasticForceOracle, k: u64) -> (StreamKey, StreamKey) {
        (o.key(k, entity::DIMER_PLUS), o.key(k, entity::DIMER_MINUS))
    }

    #[test]
    fn quartic_bias_at_the_saddle() {
        let pot = Arc::new(AnalyticDoubleWell::default());
        let o = oracle_for(pot.clone(), Matrix::zeros(2, 2), 0.0);
        let h = 0.055;
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        let est = hvp_estimate(&o, &pot.saddle(), &e1, h, keys(&o, 0), None).unwrap();
        let expected = -4.0 + 4.0 * h * h * (1.0 + 7.5 * 0.38 * 0.38);
        assert!((est.hv[0] - expected).abs() < 1e-10, "{}", est.hv[0]);
        assert!((est.hv[0] + 3.975).abs() < 2e-3);
        assert!(est.hv[1].abs() < 1e-12);
        assert_eq!(o.calls(), 2);
    }

    #[test]
    fn exact_on_quadratics() {
        let hess = Matrix::from_row_slice(2, 2, &[-4.0, 1.0, 1.0, 15.0]);
        let pot = Arc::new(QuadraticDemo::new(hess.clone()).unwrap());
        let o = oracle_for(pot, Matrix::zeros(2, 2), 0.0);
        let v = Vector::from_vec(vec![0.6, 0.8]);
        let x = Vector::from_vec(vec![0.3, -0.2]);
        for h in [1e-3, 0.1, 2.0] {
            let est = hvp_estimate(&o, &x, &v, h, keys(&o, 0), None).unwrap();
            assert!((est.hv - &hess * &v).norm() < 1e-10);
        }
    }

    #[test]
    fn isotropic_covariance_law() {
        let s = hvp_covariance(
            &CovarianceOperator::Dense(Matrix::identity(2, 2) * 0.09),
            &CovarianceOperator::Dense(Matrix::identity(2, 2) * 0.09),
            None,
            0.1,
        )
        .unwrap();
        assert!((s.to_dense() - Matrix::identity(2, 2) * (0.09 / (2.0 * 0.01))).norm() < 1e-12);
        let d = hvp_covariance(
            &CovarianceOperator::Diagonal(Vector::from_vec(vec![1.0, 2.0])),
            &CovarianceOperator::Diagonal(Vector::from_vec(vec![3.0, 2.0])),
            None,
            0.5,
        )
        .unwrap();
        assert!(matches!(d, CovarianceOperator::Diagonal(_)));
        assert!((d.to_dense() - Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 4.0]))).norm() < 1e-12);
    }

    #[test]
    fn cross_term_is_subtracted() {
        let a = CovarianceOperator::Dense(Matrix::identity(2, 2));
        let c = Matrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.5]);
        let s = hvp_covariance(&a, &a, Some(&c), 0.5).unwrap().to_dense();
        let expected = (Matrix::identity(2, 2) * 2.0 - &c - c.transpose()) / 1.0;
        assert!((s - expected).norm() < 1e-12);
    }

    #[test]
    fn zero_length_is_rejected() {
        let pot = Arc::new(AnalyticDoubleWell::default());
        let o = oracle_for(pot, Matrix::zeros(2, 2), 0.0);
        let x = Vector::zeros(2);
        let v = Vector::from_vec(vec![1.0, 0.0]);
        assert!(hvp_estimate(&o, &x, &v, 0.0, keys(&o, 0), None).is_err());
    }

    #[test]
    fn sampled_hvp_covariance_matches_the_law() {
        let pot = Arc::new(AnalyticDoubleWell::default());
        let sigma = Matrix::identity(2, 2) * 0.04;
        let o = oracle_for(pot.clone(), sigma, 1.0);
        let h = 0.1;
        let x = pot.saddle();
        let v = Vector::from_vec(vec![0.8, 0.6]);
        let n = 10_000;
        let draws: Vec<Vector> = (0..n).map(|k| hvp_estimate(&o, &x, &v, h, keys(&o, k), None).unwrap().hv).collect();
        let mean = draws.iter().fold(Vector::zeros(2), |a, d| a + d) / n as f64;
        let mut cov = Matrix::zeros(2, 2);
        for d in &draws {
            let c = d - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        let law = Matrix::identity(2, 2) * (0.04 / (2.0 * h * h));
        assert!((&cov - &law).norm() / law.norm() < 0.1);
    }

    #[test]
    fn member_route_agrees_with_the_force_route() {
        // independent member errors on both sides reproduce the force-route covariance
        let sigma = 0.2;
        let h = 0.05;
        let m = 4000;
        let mut s = StreamKey::new(8, 0, 0).stream();
        let base_p = Vector::from_vec(vec![0.1, -0.3]);
        let base_m = Vector::from_vec(vec![0.2, -0.1]);
        let plus: Vec<Vector> = (0..m).map(|_| &base_p + s.normals(2) * sigma).collect();
        let minus: Vec<Vector> = (0..m).map(|_| &base_m + s.normals(2) * sigma).collect();
        let (hv, cov) = hvp_from_members(&plus, &minus, h, 1.0, 0.0).unwrap();
        let law = hvp_covariance(
            &CovarianceOperator::Dense(Matrix::identity(2, 2) * sigma * sigma),
            &CovarianceOperator::Dense(Matrix::identity(2, 2) * sigma * sigma),
            None,
            h,
        )
        .unwrap()
        .to_dense();
        assert!((cov.to_dense() - &law).norm() / law.norm() < 0.1);
        let exact = -(&base_p - &base_m) / (2.0 * h);
        assert!((hv - exact).norm() < 5.0 * (law[(0, 0)] / m as f64).sqrt() * 2.0);
    }
}
