use nalgebra::{Cholesky, Dyn};
use serde::{Deserialize, Serialize};

use super::operator::CovarianceOperator;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky, psd_sqrt, Matrix, Vector};
use crate::rng::{entity, StreamKey};

/// Regularisation and calibration constants for metric construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricParams {
    /// Metric regularisation: `G = (Sigma + lambda I)^{-1}`.
    pub lambda: f64,
    /// Regularisation of the rotation metric on the dimer tangent space.
    pub lambda_h: f64,
    pub sigma_floor: f64,
    pub s_cal: f64,
    pub shrink_rho: f64,
    /// Relative residual tolerance of iterative solves.
    pub solve_tol: f64,
    /// Rescale `G` so that `trace(G) = d`.
    pub normalize_trace: bool,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            lambda: 0.006,
            lambda_h: 0.03,
            sigma_floor: 0.0,
            s_cal: 1.0,
            shrink_rho: 0.0,
            solve_tol: 1e-10,
            normalize_trace: false,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.solve_tol > 0.0 && self.solve_tol <= 1e-2) {
            return Err(Error::InvalidParameter(format!(
                "solve_tol must lie in (0, 1e-2], got {}",
                self.solve_tol
            )));
        }
        if self.lambda_h < 0.0 || self.sigma_floor < 0.0 || !(self.s_cal > 0.0) {
            return Err(Error::InvalidParameter("lambda_h, sigma_floor must be >= 0 and s_cal > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.shrink_rho) {
            return Err(Error::InvalidParameter("shrink_rho must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub const CG_MAX_ITERATIONS: usize = 200;
pub const TRACE_PROBES: usize = 64;

enum Solver {
    Identity,
    Dense(Cholesky<f64, Dyn>),
    Diagonal(Vector),
    /// `(lambda I + W W^T)^{-1} = (I - W (lambda I + W^T W)^{-1} W^T) / lambda`
    LowRank { w: Matrix, inner: Cholesky<f64, Dyn>, lambda: f64 },
    Block(BlockSolver),
}

struct BlockSolver {
    op: CovarianceOperator,
    lambda: f64,
    tol: f64,
    precond: Vec<(Vec<usize>, Cholesky<f64, Dyn>)>,
    uncovered: Vec<usize>,
    disjoint: bool,
}

impl BlockSolver {
    fn precondition(&self, r: &Vector) -> Vector {
        let mut out = Vector::zeros(r.len());
        for (idx, ch) in &self.precond {
            let local = Vector::from_iterator(idx.len(), idx.iter().map(|&i| r[i]));
            let y = ch.solve(&local);
            for (k, &i) in idx.iter().enumerate() {
                out[i] += y[k];
            }
        }
        for &i in &self.uncovered {
            out[i] += r[i] / self.lambda;
        }
        out
    }

    fn apply_shifted(&self, z: &Vector) -> Vector {
        self.op.apply_unchecked(z) + z * self.lambda
    }

    /// Block-Jacobi preconditioned conjugate gradient.
    fn solve(&self, z: &Vector) -> Result<Vector> {
        let zn = z.norm();
        if zn == 0.0 {
            return Ok(Vector::zeros(z.len()));
        }
        let mut x = self.precondition(z);
        let mut r = z - self.apply_shifted(&x);
        let mut res = r.norm() / zn;
        if res <= self.tol {
            return Ok(x);
        }
        let mut s = self.precondition(&r);
        let mut p = s.clone();
        let mut rs = r.dot(&s);
        for _ in 0..CG_MAX_ITERATIONS {
            let ap = self.apply_shifted(&p);
            let step = rs / p.dot(&ap);
            x.axpy(step, &p, 1.0);
            r.axpy(-step, &ap, 1.0);
            res = r.norm() / zn;
            if res <= self.tol {
                return Ok(x);
            }
            s = self.precondition(&r);
            let rs_next = r.dot(&s);
            p = &s + &p * (rs_next / rs);
            rs = rs_next;
        }
        Err(Error::NoConvergence { iterations: CG_MAX_ITERATIONS, residual: res })
    }

    fn exact_trace(&self) -> Option<f64> {
        if !self.disjoint {
            return None;
        }
        let mut t = self.uncovered.len() as f64 / self.lambda;
        for (_, ch) in &self.precond {
            t += ch.inverse().trace();
        }
        Some(t)
    }
}

/// A factored reliability metric `G = c (Sigma + lambda I)^{-1}`, where `c`
/// is 1 or the trace-normalisation factor `d / trace((Sigma + lambda I)^{-1})`.
pub struct Metric {
    dim: usize,
    scale: f64,
    solver: Solver,
}

impl std::fmt::Debug for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Metric").field("dim", &self.dim).field("scale", &self.scale).finish()
    }
}

impl Metric {
    /// The Euclidean metric `G = I`.
    pub fn identity(dim: usize) -> Self {
        Self { dim, scale: 1.0, solver: Solver::Identity }
    }

    pub fn new(op: &CovarianceOperator, params: &MetricParams) -> Result<Self> {
        let lambda = params.lambda;
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("metric solve requires lambda > 0, got {lambda}")));
        }
        let dim = op.dim();
        let solver = match op {
            CovarianceOperator::Dense(m) => {
                Solver::Dense(cholesky(m + Matrix::identity(dim, dim) * lambda)?)
            }
            CovarianceOperator::Diagonal(v) => {
                if v.iter().any(|x| *x + lambda <= 0.0) {
                    return Err(Error::NotPositiveDefinite);
                }
                Solver::Diagonal(v.map(|x| 1.0 / (x + lambda)))
            }
            CovarianceOperator::LowRank { u, c } => {
                let w = u * psd_sqrt(c);
                let r = w.ncols();
                let inner = cholesky(Matrix::identity(r, r) * lambda + w.transpose() * &w)?;
                Solver::LowRank { w, inner, lambda }
            }
            CovarianceOperator::BlockLocal { blocks, .. } => {
                let mut covered = vec![false; dim];
                let mut precond = Vec::with_capacity(blocks.len());
                for b in blocks {
                    let n = b.indices.len();
                    precond.push((b.indices.clone(), cholesky(&b.matrix + Matrix::identity(n, n) * lambda)?));
                    for &i in &b.indices {
                        covered[i] = true;
                    }
                }
                let uncovered = (0..dim).filter(|&i| !covered[i]).collect();
                Solver::Block(BlockSolver {
                    op: op.clone(),
                    lambda,
                    tol: params.solve_tol,
                    precond,
                    uncovered,
                    disjoint: op.blocks_disjoint(),
                })
            }
        };
        let mut metric = Self { dim, scale: 1.0, solver };
        if params.normalize_trace && dim > 0 {
            let t = metric.raw_trace()?;
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::NonFinite("metric trace"));
            }
            metric.scale = dim as f64 / t;
        }
        Ok(metric)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Trace-normalisation factor (1 when normalisation is off).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn raw_solve(&self, z: &Vector) -> Result<Vector> {
        Ok(match &self.solver {
            Solver::Identity => z.clone(),
            Solver::Dense(ch) => ch.solve(z),
            Solver::Diagonal(inv) => inv.component_mul(z),
            Solver::LowRank { w, inner, lambda } => {
                let t = inner.solve(&(w.transpose() * z));
                (z - w * t) / *lambda
            }
            Solver::Block(b) => b.solve(z)?,
        })
    }

    /// `G z`.
    pub fn apply(&self, z: &Vector) -> Result<Vector> {
        check_dim(self.dim, z.len())?;
        let y = self.raw_solve(z)?;
        Ok(if self.scale == 1.0 { y } else { y * self.scale })
    }

    /// `z^T G z`.
    pub fn quad(&self, z: &Vector) -> Result<f64> {
        Ok(z.dot(&self.apply(z)?))
    }

    /// `|z|_G`.
    pub fn norm(&self, z: &Vector) -> Result<f64> {
        Ok(self.quad(z)?.max(0.0).sqrt())
    }

    /// `trace(G)` including the normalisation factor.
    pub fn trace(&self) -> Result<f64> {
        Ok(self.raw_trace()? * self.scale)
    }

    fn raw_trace(&self) -> Result<f64> {
        match &self.solver {
            Solver::Identity => Ok(self.dim as f64),
            Solver::Dense(ch) => Ok(ch.inverse().trace()),
            Solver::Diagonal(inv) => Ok(inv.sum()),
            Solver::Block(b) => match b.exact_trace() {
                Some(t) => Ok(t),
                None => self.hutchinson_trace(),
            },
            Solver::LowRank { .. } => self.hutchinson_trace(),
        }
    }

    /// Rademacher probing with a fixed stream, so the estimate is a
    /// deterministic function of the operator.
    fn hutchinson_trace(&self) -> Result<f64> {
        let mut noise = StreamKey::new(0x7ace, 0, entity::TRACE_PROBE).stream();
        let mut acc = 0.0;
        for _ in 0..TRACE_PROBES {
            let z = Vector::from_fn(self.dim, |_, _| noise.rademacher());
            acc += z.dot(&self.raw_solve(&z)?);
        }
        Ok(acc / TRACE_PROBES as f64)
    }
}

/// `G z` for `G = (Sigma + lambda I)^{-1}`, optionally trace-normalised.
pub fn apply_metric(op: &CovarianceOperator, params: &MetricParams, z: &Vector) -> Result<Vector> {
    check_dim(op.dim(), z.len())?;
    Metric::new(op, params)?.apply(z)
}
