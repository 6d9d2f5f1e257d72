use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Periodic atomistic cell. Rows of `cell` are the lattice vectors (Å).
#[derive(Clone, Debug, PartialEq)]
pub struct Supercell {
    pub cell: Matrix3<f64>,
    pub positions: Vec<Vector3<f64>>,
    pub species: Vec<String>,
    pub periodic: [bool; 3],
    pub frozen: Vec<bool>,
    /// Lattice position of the removed site, when the cell holds a vacancy.
    pub vacancy_site: Option<Vector3<f64>>,
}

/// The vacancy and the neighbouring atom that hops into it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HopPair {
    pub vacancy_site: Vector3<f64>,
    pub migrating_atom: usize,
}

impl Supercell {
    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    /// Shortest periodic image of a displacement.
    pub fn minimum_image(&self, d: Vector3<f64>) -> Vector3<f64> {
        let ct = self.cell.transpose();
        let Some(inv) = ct.try_inverse() else { return d };
        let mut f = inv * d;
        for k in 0..3 {
            if self.periodic[k] {
                f[k] -= f[k].round();
            }
        }
        ct * f
    }

    pub fn to_flat(&self) -> Vector {
        Vector::from_iterator(3 * self.n_atoms(), self.positions.iter().flat_map(|p| [p.x, p.y, p.z]))
    }

    /// Copy of the cell with positions taken from a flat `3N` vector.
    pub fn with_flat(&self, x: &Vector) -> Result<Self> {
        crate::error::check_dim(3 * self.n_atoms(), x.len())?;
        let mut out = self.clone();
        for (i, p) in out.positions.iter_mut().enumerate() {
            *p = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
        }
        Ok(out)
    }

    /// Per-component mask (`true` = free) matching the flat layout.
    pub fn free_mask(&self) -> Vec<bool> {
        self.frozen.iter().flat_map(|&f| [!f; 3]).collect()
    }

    /// Smallest width of the cell measured between opposite faces.
    pub fn min_face_distance(&self) -> f64 {
        let (a, b, c) = (self.cell.row(0).transpose(), self.cell.row(1).transpose(), self.cell.row(2).transpose());
        let vol = a.dot(&b.cross(&c)).abs();
        [b.cross(&c).norm(), c.cross(&a).norm(), a.cross(&b).norm()]
            .into_iter()
            .map(|area| vol / area)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Cubic bcc supercell of `n_cells^3` conventional cells with the site
/// nearest the box centre removed.
///
/// The migrating atom is the neighbour at `+(1/2, 1/2, 1/2) a0` from the vacancy.
pub fn build_vacancy_supercell(n_cells: usize, a0: f64, species: &str) -> Result<(Supercell, HopPair)> {
    if n_cells < 2 {
        return Err(Error::InvalidParameter(format!("n_cells must be at least 2, got {n_cells}")));
    }
    if !(a0 > 0.0) {
        return Err(Error::InvalidParameter(format!("lattice constant must be positive, got {a0}")));
    }
    let mut sites = Vec::with_capacity(2 * n_cells.pow(3));
    for i in 0..n_cells {
        for j in 0..n_cells {
            for k in 0..n_cells {
                let corner = Vector3::new(i as f64, j as f64, k as f64) * a0;
                sites.push(corner);
                sites.push(corner + Vector3::repeat(0.5 * a0));
            }
        }
    }
    let length = n_cells as f64 * a0;
    let center = Vector3::repeat(0.5 * length);
    let nearest = |target: Vector3<f64>| {
        let mut best = 0;
        for (s, p) in sites.iter().enumerate() {
            if (p - target).norm() < (sites[best] - target).norm() - 1e-9 {
                best = s;
            }
        }
        best
    };
    let vac = nearest(center);
    let vacancy_site = sites[vac];
    let mut hop_target = vacancy_site + Vector3::repeat(0.5 * a0);
    hop_target.apply(|x| *x = x.rem_euclid(length));
    let partner = nearest(hop_target);
    sites.remove(vac);
    let migrating_atom = if partner > vac { partner - 1 } else { partner };
    let n = sites.len();
    let cell = Supercell {
        cell: Matrix3::identity() * length,
        positions: sites,
        species: vec![species.to_string(); n],
        periodic: [true; 3],
        frozen: vec![false; n],
        vacancy_site: Some(vacancy_site),
    };
    Ok((cell, HopPair { vacancy_site, migrating_atom }))
}
