//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Cholesky factor or `NotPositiveDefinite`.
pub fn cholesky(m: Matrix) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    m.cholesky().ok_or(Error::NotPositiveDefinite)
}

/// Symmetric square root of a PSD matrix; negative round-off eigenvalues are
/// clamped to zero.
pub fn psd_sqrt(m: &Matrix) -> Matrix {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Largest eigenvalue of a symmetric PSD operator by power iteration.
pub fn power_iteration<F>(dim: usize, steps: usize, tol: f64, mut apply: F) -> f64
where
    F: FnMut(&Vector) -> Vector,
{
    if dim == 0 {
        return 0.0;
    }
    // deterministic start with components in every direction
    let mut v = Vector::from_fn(dim, |i, _| 1.0 + 0.1 * ((i * 7919 % 97) as f64) / 97.0);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..steps {
        let w = apply(&v);
        let next = v.dot(&w);
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        v = w / n;
        if (next - lambda).abs() <= tol * next.abs().max(1e-300) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotient at the final iterate
    let w = apply(&v);
    lambda.max(v.dot(&w))
}

/// Orthonormal basis (d x (d-1)) of the complement of the unit vector `v`,
/// taken from the columns of the Householder reflector that maps `v` to a
/// coordinate axis.
pub fn householder_complement(v: &Vector) -> Matrix {
    let d = v.len();
    // reflect onto -sign(v_k) e_k where k maximises |v_k|, for stability
    let (k, _) = v
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
    let s = if v[k] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = v.clone();
    w[k] += s;
    let wn2 = w.norm_squared();
    // H = I - 2 w w^T / |w|^2 ; H v = -s e_k, so the other columns of H span v-perp
    let mut basis = Matrix::zeros(d, d.saturating_sub(1));
    let mut col = 0;
    for j in 0..d {
        if j == k {
            continue;
        }
        let mut hj = -(2.0 * w[j] / wn2) * &w;
        hj[j] += 1.0;
        basis.set_column(col, &hj);
        col += 1;
    }
    basis
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal() {
        let v = Vector::from_vec(vec![0.3, -0.5, 0.2, 0.7]).normalize();
        let b = householder_complement(&v);
        let gram = b.transpose() * &b;
        assert!((gram - Matrix::identity(3, 3)).norm() < 1e-12);
        assert!((b.transpose() * &v).norm() < 1e-12);
    }

    #[test]
    fn power_iteration_matches_eigen() {
        let a = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let top = a.clone().symmetric_eigen().eigenvalues.max();
        let est = power_iteration(3, 500, 1e-14, |v| &a * v);
        assert!((est - top).abs() < 1e-8);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = psd_sqrt(&a);
        assert!((&s * &s - a).norm() < 1e-12);
    }
}
