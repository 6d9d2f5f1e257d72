//! Mean potentials, prescribed covariance fields and the stochastic force
//! oracle built from them.

mod analytic;
mod eam;
mod fields;
mod lattice;
mod oracle;

use std::sync::Arc;

pub use analytic::{analytic_energy_grad, analytic_mep_reference, mep_tangent, AnalyticDoubleWell, QuadraticDemo};
pub use eam::{
    eam_energy_forces, parse_setfl, write_setfl, CubicSpline, EamFs, EamPotential, EamTables, FinnisSinclair,
    SetflElement, SetflStyle,
};
pub use fields::{ConstantField, CoreField3D, DiagonalField, ScaledField, TubeField2D};
pub use lattice::{build_vacancy_supercell, HopPair, Supercell};
pub use oracle::{ForceSample, StochasticForceOracle};

use crate::covariance::CovarianceOperator;
use crate::error::Result;
use crate::linalg::Vector;

/// Deterministic mean potential `E(x)` with its gradient.
pub trait PotentialField: Send + Sync {
    fn dim(&self) -> usize;

    fn energy_gradient(&self, x: &Vector) -> Result<(f64, Vector)>;

    fn energy(&self, x: &Vector) -> Result<f64> {
        Ok(self.energy_gradient(x)?.0)
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        Ok(self.energy_gradient(x)?.1)
    }
}

/// Spatially varying force covariance `Sigma_F(x)`.
pub trait CovarianceField: Send + Sync {
    fn dim(&self) -> usize;

    fn sigma_at(&self, x: &Vector) -> Result<CovarianceOperator>;
}

impl<T: PotentialField + ?Sized> PotentialField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn energy_gradient(&self, x: &Vector) -> Result<(f64, Vector)> {
        (**self).energy_gradient(x)
    }
}

impl<T: CovarianceField + ?Sized> CovarianceField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn sigma_at(&self, x: &Vector) -> Result<CovarianceOperator> {
        (**self).sigma_at(x)
    }
}

/// Central finite-difference gradient, used by tests and diagnostics.
pub fn finite_difference_gradient(p: &dyn PotentialField, x: &Vector, step: f64) -> Result<Vector> {
    let mut g = Vector::zeros(x.len());
    let mut y = x.clone();
    for j in 0..x.len() {
        y[j] = x[j] + step;
        let ep = p.energy(&y)?;
        y[j] = x[j] - step;
        let em = p.energy(&y)?;
        y[j] = x[j];
        g[j] = (ep - em) / (2.0 * step);
    }
    Ok(g)
}
