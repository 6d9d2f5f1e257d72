use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::CovarianceField;
use crate::covariance::{CovarianceOperator, LocalBlock};
use crate::error::{check_dim, Result};
use crate::linalg::{Matrix, Vector};

/// Anisotropic covariance tube around the curved channel `x2 = a (1 - x1^2)`.
///
/// The eigenframe is the local path tangent/normal frame rotated by
/// `rotation_theta`. Tangential and normal standard deviations are an
/// amplitude times a Gaussian in `x1` centred on the saddle, combined with
/// per-axis floors; the whole tube decays with the vertical offset from the
/// path, and an isotropic floor is added everywhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TubeField2D {
    pub sigma_t_amp: f64,
    pub sigma_n_amp: f64,
    pub rotation_theta: f64,
    pub floor_t: f64,
    pub floor_n: f64,
    pub iso_floor: f64,
    /// Channel curvature parameter of the mean potential.
    pub path_a: f64,
    /// Width of the Gaussian amplitude envelope along `x1`.
    pub saddle_width: f64,
    /// Width of the Gaussian tube envelope in the offset from the path.
    pub tube_width: f64,
}

impl Default for TubeField2D {
    fn default() -> Self {
        Self {
            sigma_t_amp: 0.030,
            sigma_n_amp: 0.260,
            rotation_theta: 0.0,
            floor_t: 0.012,
            floor_n: 0.020,
            iso_floor: 0.006,
            path_a: 0.38,
            saddle_width: 0.35,
            tube_width: 0.5,
        }
    }
}

impl TubeField2D {
    /// Principal axes `(e_t, e_n)` and variances `(var_t, var_n)` of the tube
    /// part at `x` (without the isotropic floor).
    pub fn frame(&self, x: &Vector) -> ((Vector, Vector), (f64, f64)) {
        let (x1, x2) = (x[0], x[1]);
        let a = self.path_a;
        let t = Vector::from_vec(vec![1.0, -2.0 * a * x1]).normalize();
        let n = Vector::from_vec(vec![-t[1], t[0]]);
        let (c, s) = (self.rotation_theta.cos(), self.rotation_theta.sin());
        let et = &t * c + &n * s;
        let en = &n * c - &t * s;
        let along = (-x1 * x1 / (2.0 * self.saddle_width.powi(2))).exp();
        let offset = x2 - a * (1.0 - x1 * x1);
        let tube = (-offset * offset / (2.0 * self.tube_width.powi(2))).exp();
        let var_t = tube * ((self.sigma_t_amp * along).powi(2) + self.floor_t.powi(2));
        let var_n = tube * ((self.sigma_n_amp * along).powi(2) + self.floor_n.powi(2));
        ((et, en), (var_t, var_n))
    }
}

impl CovarianceField for TubeField2D {
    fn dim(&self) -> usize {
        2
    }

    fn sigma_at(&self, x: &Vector) -> Result<CovarianceOperator> {
        check_dim(2, x.len())?;
        let ((et, en), (vt, vn)) = self.frame(x);
        let mut m = &et * et.transpose() * vt + &en * en.transpose() * vn;
        m[(0, 0)] += self.iso_floor.powi(2);
        m[(1, 1)] += self.iso_floor.powi(2);
        let m = (&m + m.transpose()) * 0.5;
        Ok(CovarianceOperator::Dense(m))
    }
}

/// Per-atom covariance localised at a vacancy-hop core.
///
/// Atom `j` receives the 3x3 block
/// `env_j^2 gate^2 [T^2 (I - h h^T) + P^2 h h^T] + floor^2 I`, where `h` is
/// the hop axis, `env_j = exp(-|r_j - c|^2 / (2 R^2))` uses the
/// minimum-image distance to the hop midpoint `c`, and `gate` is a Gaussian
/// of width `midpoint_width` in the migrating atom's fractional progress along
/// the hop, centred at one half.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreField3D {
    pub core_center: Vector3<f64>,
    pub hop_axis: Vector3<f64>,
    pub core_radius: f64,
    pub midpoint_width: f64,
    pub floor: f64,
    pub parallel_amp: f64,
    pub transverse_amp: f64,
    pub migrating_atom: usize,
    pub hop_start: Vector3<f64>,
    pub hop_length: f64,
    pub cell: Matrix3<f64>,
    pub n_atoms: usize,
}

impl CoreField3D {
    fn minimum_image(&self, d: Vector3<f64>) -> Vector3<f64> {
        let inv = self.cell.transpose().try_inverse().unwrap_or_else(Matrix3::identity);
        let mut f = inv * d;
        f.apply(|x| *x -= x.round());
        self.cell.transpose() * f
    }

    /// Hop progress of the migrating atom (0 at the start site, 1 at the vacancy).
    pub fn progress(&self, x: &Vector) -> f64 {
        let m = self.migrating_atom;
        let p = Vector3::new(x[3 * m], x[3 * m + 1], x[3 * m + 2]);
        self.minimum_image(p - self.hop_start).dot(&self.hop_axis) / self.hop_length
    }

    pub fn gate(&self, x: &Vector) -> f64 {
        let s = self.progress(x) - 0.5;
        (-s * s / (2.0 * self.midpoint_width.powi(2))).exp()
    }

    pub fn block_for(&self, position: Vector3<f64>, gate: f64) -> Matrix3<f64> {
        let r = self.minimum_image(position - self.core_center).norm();
        let env = (-r * r / (2.0 * self.core_radius.powi(2))).exp() * gate;
        let hh = self.hop_axis * self.hop_axis.transpose();
        let aniso = (Matrix3::identity() - hh) * self.transverse_amp.powi(2) + hh * self.parallel_amp.powi(2);
        aniso * env * env + Matrix3::identity() * self.floor.powi(2)
    }
}

impl CovarianceField for CoreField3D {
    fn dim(&self) -> usize {
        3 * self.n_atoms
    }

    fn sigma_at(&self, x: &Vector) -> Result<CovarianceOperator> {
        check_dim(self.dim(), x.len())?;
        let gate = self.gate(x);
        let blocks = (0..self.n_atoms)
            .map(|j| {
                let p = Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
                let b = self.block_for(p, gate);
                LocalBlock { indices: vec![3 * j, 3 * j + 1, 3 * j + 2], matrix: Matrix::from_fn(3, 3, |r, c| b[(r, c)]) }
            })
            .collect();
        Ok(CovarianceOperator::BlockLocal { dim: self.dim(), blocks })
    }
}

/// The same operator everywhere.
#[derive(Clone, Debug)]
pub struct ConstantField(pub CovarianceOperator);

impl CovarianceField for ConstantField {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn sigma_at(&self, x: &Vector) -> Result<CovarianceOperator> {
        check_dim(self.0.dim(), x.len())?;
        Ok(self.0.clone())
    }
}

/// `factor * Sigma(x)`.
#[derive(Clone)]
pub struct ScaledField {
    pub inner: Arc<dyn CovarianceField>,
    pub factor: f64,
}

impl CovarianceField for ScaledField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sigma_at(&self, x: &Vector) -> Result<CovarianceOperator> {
        Ok(self.inner.sigma_at(x)?.scaled(self.factor))
    }
}

/// `diag(Sigma(x))`.
#[derive(Clone)]
pub struct DiagonalField(pub Arc<dyn CovarianceField>);

impl CovarianceField for DiagonalField {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn sigma_at(&self, x: &Vector) -> Result<CovarianceOperator> {
        Ok(self.0.sigma_at(x)?.to_diagonal())
    }
}
