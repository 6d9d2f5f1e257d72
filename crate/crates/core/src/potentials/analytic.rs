use super::PotentialField;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, Vector};

/// `E = (x1^2 - 1)^2 + k (x2 - a (1 - x1^2))^2` and its gradient.
pub fn analytic_energy_grad(x: &Vector, a: f64, k: f64) -> (f64, Vector) {
    let (x1, x2) = (x[0], x[1]);
    let w = x1 * x1 - 1.0;
    let q = x2 - a * (1.0 - x1 * x1);
    let e = w * w + k * q * q;
    let g1 = 4.0 * x1 * w + 4.0 * k * a * x1 * q;
    let g2 = 2.0 * k * q;
    (e, Vector::from_vec(vec![g1, g2]))
}

/// Unit tangent of the exact path `x2 = a (1 - x1^2)` at abscissa `x1`,
/// oriented towards increasing `x1`.
pub fn mep_tangent(a: f64, x1: f64) -> Vector {
    Vector::from_vec(vec![1.0, -2.0 * a * x1]).normalize()
}

/// Points of the exact path for `x1` uniform on `[-1, 1]` and its barrier (1).
pub fn analytic_mep_reference(a: f64, n_points: usize) -> Result<(Vec<Vector>, f64)> {
    if n_points < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 path points, got {n_points}")));
    }
    let path = (0..n_points)
        .map(|i| {
            let x1 = -1.0 + 2.0 * i as f64 / (n_points - 1) as f64;
            Vector::from_vec(vec![x1, a * (1.0 - x1 * x1)])
        })
        .collect();
    Ok((path, 1.0))
}

/// Two-dimensional double well with a curved channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticDoubleWell {
    pub a: f64,
    pub k: f64,
}

impl Default for AnalyticDoubleWell {
    fn default() -> Self {
        Self { a: 0.38, k: 7.5 }
    }
}

impl AnalyticDoubleWell {
    pub fn saddle(&self) -> Vector {
        Vector::from_vec(vec![0.0, self.a])
    }

    pub fn minima(&self) -> (Vector, Vector) {
        (Vector::from_vec(vec![-1.0, 0.0]), Vector::from_vec(vec![1.0, 0.0]))
    }

    pub fn hessian(&self, x: &Vector) -> Matrix {
        let (x1, x2) = (x[0], x[1]);
        let (a, k) = (self.a, self.k);
        let q = x2 - a * (1.0 - x1 * x1);
        let h11 = 12.0 * x1 * x1 - 4.0 + 4.0 * k * a * q + 8.0 * k * a * a * x1 * x1;
        let h12 = 4.0 * k * a * x1;
        Matrix::from_row_slice(2, 2, &[h11, h12, h12, 2.0 * k])
    }
}

impl PotentialField for AnalyticDoubleWell {
    fn dim(&self) -> usize {
        2
    }

    fn energy_gradient(&self, x: &Vector) -> Result<(f64, Vector)> {
        check_dim(2, x.len())?;
        Ok(analytic_energy_grad(x, self.a, self.k))
    }
}

/// `E = x^T H x / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticDemo {
    pub h: Matrix,
}

impl QuadraticDemo {
    pub fn new(h: Matrix) -> Result<Self> {
        if !h.is_square() {
            return Err(Error::InvalidParameter("Hessian must be square".into()));
        }
        Ok(Self { h })
    }
}

impl PotentialField for QuadraticDemo {
    fn dim(&self) -> usize {
        self.h.nrows()
    }

    fn energy_gradient(&self, x: &Vector) -> Result<(f64, Vector)> {
        check_dim(self.dim(), x.len())?;
        let g = &self.h * x;
        Ok((0.5 * x.dot(&g), g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::finite_difference_gradient;
    use crate::rng::StreamKey;

    fn v(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn minimum_and_saddle_values() {
        let (e, g) = analytic_energy_grad(&v(-1.0, 0.0), 0.38, 7.5);
        assert_eq!(e, 0.0);
        assert_eq!(g.norm(), 0.0);
        let (e, g) = analytic_energy_grad(&v(0.0, 0.38), 0.38, 7.5);
        assert!((e - 1.0).abs() < 1e-15);
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn origin_value_and_fd_gradient() {
        let p = AnalyticDoubleWell::default();
        let x = v(0.0, 0.0);
        let (e, g) = p.energy_gradient(&x).unwrap();
        assert!((e - (1.0 + 7.5 * 0.38f64.powi(2))).abs() < 1e-14);
        let fd = finite_difference_gradient(&p, &x, 1e-5).unwrap();
        assert!((g - fd).norm() < 1e-8);
    }

    #[test]
    fn gradient_matches_fd_at_random_points() {
        let p = AnalyticDoubleWell::default();
        let mut s = StreamKey::new(1, 2, 3).stream();
        for _ in 0..20 {
            let x = s.normals(2);
            let g = p.gradient(&x).unwrap();
            let fd = finite_difference_gradient(&p, &x, 1e-5).unwrap();
            assert!((&g - &fd).norm() <= 1e-6 * g.norm().max(1.0));
        }
    }

    #[test]
    fn saddle_hessian_has_one_negative_mode() {
        let p = AnalyticDoubleWell::default();
        let h = p.hessian(&p.saddle());
        assert!((h - Matrix::from_row_slice(2, 2, &[-4.0, 0.0, 0.0, 15.0])).norm() < 1e-12);
    }

    #[test]
    fn reference_curve_is_the_valley_floor() {
        let (path, barrier) = analytic_mep_reference(0.38, 3).unwrap();
        assert_eq!(barrier, 1.0);
        assert_eq!(path, vec![v(-1.0, 0.0), v(0.0, 0.38), v(1.0, 0.0)]);
        let (dense, _) = analytic_mep_reference(0.38, 101).unwrap();
        for x in &dense {
            let (_, g) = analytic_energy_grad(x, 0.38, 7.5);
            assert!(g[1].abs() < 1e-12);
        }
        // The normal force vanishes at the two minima and the saddle only.
        for x in [v(-1.0, 0.0), v(0.0, 0.38), v(1.0, 0.0)] {
            let (_, g) = analytic_energy_grad(&x, 0.38, 7.5);
            let t = mep_tangent(0.38, x[0]);
            assert!((&g - &t * t.dot(&g)).norm() < 1e-12);
        }
        let (_, g) = analytic_energy_grad(&v(0.5, 0.38 * 0.75), 0.38, 7.5);
        let t = mep_tangent(0.38, 0.5);
        assert!((&g - &t * t.dot(&g)).norm() > 0.1);
        assert!(analytic_mep_reference(0.38, 2).is_err());
    }

    #[test]
    fn barrier_is_max_along_curve() {
        let (dense, _) = analytic_mep_reference(0.38, 20001).unwrap();
        let top = dense.iter().map(|x| analytic_energy_grad(x, 0.38, 7.5).0).fold(f64::MIN, f64::max);
        assert!((top - 1.0).abs() < 1e-12);
    }
}
