use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky, power_iteration, psd_sqrt, Matrix, Vector};
use crate::rng::NoiseStream;

/// A small dense PSD block acting on a subset of coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBlock {
    pub indices: Vec<usize>,
    pub matrix: Matrix,
}

impl LocalBlock {
    pub fn new(indices: Vec<usize>, matrix: Matrix) -> Result<Self> {
        if matrix.nrows() != indices.len() || matrix.ncols() != indices.len() {
            return Err(Error::InvalidParameter(format!(
                "block of size {}x{} does not match {} indices",
                matrix.nrows(),
                matrix.ncols(),
                indices.len()
            )));
        }
        Ok(Self { indices, matrix })
    }

    fn gather(&self, z: &Vector) -> Vector {
        Vector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| z[i]))
    }
}

/// Force-error covariance in one of four storage forms.
#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceOperator {
    Dense(Matrix),
    Diagonal(Vector),
    /// Sum of padded blocks `P_l^T B_l P_l`; blocks may overlap.
    BlockLocal { dim: usize, blocks: Vec<LocalBlock> },
    /// `U C U^T` with `U` of shape d x r.
    LowRank { u: Matrix, c: Matrix },
}

fn symmetric(m: &Matrix) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

impl CovarianceOperator {
    pub fn zeros(dim: usize) -> Self {
        CovarianceOperator::Diagonal(Vector::zeros(dim))
    }

    pub fn dense(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidParameter("dense covariance must be square".into()));
        }
        if !symmetric(&m) {
            return Err(Error::InvalidParameter("dense covariance must be symmetric".into()));
        }
        Ok(CovarianceOperator::Dense(m))
    }

    pub fn diagonal(v: Vector) -> Result<Self> {
        if v.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidParameter("diagonal variances must be finite and nonnegative".into()));
        }
        Ok(CovarianceOperator::Diagonal(v))
    }

    pub fn block_local(dim: usize, blocks: Vec<LocalBlock>) -> Result<Self> {
        for b in &blocks {
            if b.indices.iter().any(|&i| i >= dim) {
                return Err(Error::InvalidParameter("block index out of range".into()));
            }
            if !symmetric(&b.matrix) {
                return Err(Error::InvalidParameter("local block must be symmetric".into()));
            }
        }
        Ok(CovarianceOperator::BlockLocal { dim, blocks })
    }

    pub fn low_rank(u: Matrix, c: Matrix) -> Result<Self> {
        if c.nrows() != u.ncols() || !c.is_square() {
            return Err(Error::InvalidParameter("low-rank core must be r x r with r = cols(U)".into()));
        }
        if !symmetric(&c) {
            return Err(Error::InvalidParameter("low-rank core must be symmetric".into()));
        }
        Ok(CovarianceOperator::LowRank { u, c })
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceOperator::Dense(m) => m.nrows(),
            CovarianceOperator::Diagonal(v) => v.len(),
            CovarianceOperator::BlockLocal { dim, .. } => *dim,
            CovarianceOperator::LowRank { u, .. } => u.nrows(),
        }
    }

    /// `Sigma z`.
    pub fn apply(&self, z: &Vector) -> Result<Vector> {
        check_dim(self.dim(), z.len())?;
        Ok(self.apply_unchecked(z))
    }

    pub(crate) fn apply_unchecked(&self, z: &Vector) -> Vector {
        match self {
            CovarianceOperator::Dense(m) => m * z,
            CovarianceOperator::Diagonal(v) => v.component_mul(z),
            CovarianceOperator::BlockLocal { dim, blocks } => {
                let mut out = Vector::zeros(*dim);
                for b in blocks {
                    let y = &b.matrix * b.gather(z);
                    for (k, &i) in b.indices.iter().enumerate() {
                        out[i] += y[k];
                    }
                }
                out
            }
            CovarianceOperator::LowRank { u, c } => u * (c * (u.transpose() * z)),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            CovarianceOperator::Dense(m) => m.clone(),
            CovarianceOperator::Diagonal(v) => Matrix::from_diagonal(v),
            CovarianceOperator::BlockLocal { dim, blocks } => {
                let mut out = Matrix::zeros(*dim, *dim);
                for b in blocks {
                    for (p, &i) in b.indices.iter().enumerate() {
                        for (q, &j) in b.indices.iter().enumerate() {
                            out[(i, j)] += b.matrix[(p, q)];
                        }
                    }
                }
                out
            }
            CovarianceOperator::LowRank { u, c } => u * c * u.transpose(),
        }
    }

    pub fn diagonal_entries(&self) -> Vector {
        match self {
            CovarianceOperator::Dense(m) => m.diagonal(),
            CovarianceOperator::Diagonal(v) => v.clone(),
            CovarianceOperator::BlockLocal { dim, blocks } => {
                let mut out = Vector::zeros(*dim);
                for b in blocks {
                    for (p, &i) in b.indices.iter().enumerate() {
                        out[i] += b.matrix[(p, p)];
                    }
                }
                out
            }
            CovarianceOperator::LowRank { u, c } => {
                Vector::from_fn(u.nrows(), |i, _| {
                    let row = u.row(i);
                    (row * c * row.transpose())[(0, 0)]
                })
            }
        }
    }

    /// `diag(Sigma)` as a diagonal operator.
    pub fn to_diagonal(&self) -> Self {
        CovarianceOperator::Diagonal(self.diagonal_entries().map(|x| x.max(0.0)))
    }

    pub fn trace(&self) -> f64 {
        self.diagonal_entries().sum()
    }

    /// `s * Sigma` for `s >= 0`.
    pub fn scaled(&self, s: f64) -> Self {
        match self {
            CovarianceOperator::Dense(m) => CovarianceOperator::Dense(m * s),
            CovarianceOperator::Diagonal(v) => CovarianceOperator::Diagonal(v * s),
            CovarianceOperator::BlockLocal { dim, blocks } => CovarianceOperator::BlockLocal {
                dim: *dim,
                blocks: blocks
                    .iter()
                    .map(|b| LocalBlock { indices: b.indices.clone(), matrix: &b.matrix * s })
                    .collect(),
            },
            CovarianceOperator::LowRank { u, c } => CovarianceOperator::LowRank { u: u.clone(), c: c * s },
        }
    }

    /// True when no coordinate belongs to two blocks.
    pub fn blocks_disjoint(&self) -> bool {
        match self {
            CovarianceOperator::BlockLocal { dim, blocks } => {
                let mut seen = vec![false; *dim];
                for b in blocks {
                    for &i in &b.indices {
                        if seen[i] {
                            return false;
                        }
                        seen[i] = true;
                    }
                }
                true
            }
            _ => true,
        }
    }

    /// A draw `Sigma^{1/2} xi` with covariance `Sigma`.
    ///
    /// Dense and diagonal forms use the symmetric square root; the factored
    /// forms push lower-dimensional normals through their factors, so the
    /// number of consumed draws is `d` (dense/diagonal), `sum b_l` (blocks)
    /// or `r` (low rank).
    pub fn sample(&self, noise: &mut NoiseStream) -> Vector {
        match self {
            CovarianceOperator::Dense(m) => psd_sqrt(m) * noise.normals(m.nrows()),
            CovarianceOperator::Diagonal(v) => {
                let xi = noise.normals(v.len());
                v.map(|x| x.max(0.0).sqrt()).component_mul(&xi)
            }
            CovarianceOperator::BlockLocal { dim, blocks } => {
                let mut out = Vector::zeros(*dim);
                for b in blocks {
                    let y = psd_sqrt(&b.matrix) * noise.normals(b.indices.len());
                    for (k, &i) in b.indices.iter().enumerate() {
                        out[i] += y[k];
                    }
                }
                out
            }
            CovarianceOperator::LowRank { u, c } => u * (psd_sqrt(c) * noise.normals(c.nrows())),
        }
    }

    /// Largest eigenvalue by power iteration (50 steps, tol 1e-8).
    pub fn max_eigenvalue(&self) -> f64 {
        match self {
            CovarianceOperator::Diagonal(v) => v.max().max(0.0),
            _ => power_iteration(self.dim(), 50, 1e-8, |z| self.apply_unchecked(z)),
        }
    }

    /// `z^T Sigma z`.
    pub fn quadratic_form(&self, z: &Vector) -> Result<f64> {
        Ok(z.dot(&self.apply(z)?))
    }
}

/// `Sigma z`.
pub fn apply_sigma(op: &CovarianceOperator, z: &Vector) -> Result<Vector> {
    op.apply(z)
}

/// `log det(Sigma + lambda I)`.
pub fn logdet(op: &CovarianceOperator, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("logdet requires lambda > 0, got {lambda}")));
    }
    let d = op.dim();
    match op {
        CovarianceOperator::Diagonal(v) => Ok(v.iter().map(|x| (x + lambda).ln()).sum()),
        CovarianceOperator::Dense(m) => {
            let shifted = m + Matrix::identity(d, d) * lambda;
            Ok(chol_logdet(shifted)?)
        }
        CovarianceOperator::LowRank { u, c } => {
            // matrix determinant lemma with W = U C^{1/2}:
            // det(lambda I + W W^T) = lambda^d det(I_r + W^T W / lambda)
            let w = u * psd_sqrt(c);
            let r = w.ncols();
            let inner = Matrix::identity(r, r) + w.transpose() * &w / lambda;
            Ok(d as f64 * lambda.ln() + chol_logdet(inner)?)
        }
        CovarianceOperator::BlockLocal { blocks, .. } => {
            if op.blocks_disjoint() {
                let mut covered = 0usize;
                let mut total = 0.0;
                for b in blocks {
                    let n = b.indices.len();
                    covered += n;
                    total += chol_logdet(&b.matrix + Matrix::identity(n, n) * lambda)?;
                }
                Ok(total + (d - covered) as f64 * lambda.ln())
            } else {
                chol_logdet(op.to_dense() + Matrix::identity(d, d) * lambda)
            }
        }
    }
}

fn chol_logdet(m: Matrix) -> Result<f64> {
    let ch = cholesky(m)?;
    Ok(2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}
