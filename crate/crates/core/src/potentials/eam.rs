use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{PotentialField, Supercell};
use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetflStyle {
    /// `eam/alloy`: one density table per element.
    Alloy,
    /// `eam/fs`: one density table per element pair.
    Fs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetflElement {
    pub atomic_number: u32,
    pub mass: f64,
    pub lattice_constant: f64,
    pub lattice_type: String,
    pub embedding: Vec<f64>,
    /// One table (alloy) or one per partner element (fs).
    pub density: Vec<Vec<f64>>,
}

/// Raw contents of a setfl file.
#[derive(Clone, Debug, PartialEq)]
pub struct EamTables {
    pub style: SetflStyle,
    pub comments: [String; 3],
    pub symbols: Vec<String>,
    pub nrho: usize,
    pub drho: f64,
    pub nr: usize,
    pub dr: f64,
    pub cutoff: f64,
    pub elements: Vec<SetflElement>,
    /// `r * phi(r)` for pairs `(i, j)`, `i >= j`, in file order.
    pub pair: Vec<Vec<f64>>,
}

struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(lines: impl Iterator<Item = (usize, &'a str)>) -> Self {
        let mut items = Vec::new();
        let mut last_line = 0;
        for (n, line) in lines {
            last_line = n;
            items.extend(line.split_whitespace().map(|t| (t, n)));
        }
        Self { items, pos: 0, last_line }
    }

    fn next(&mut self, what: &str) -> Result<(&'a str, usize)> {
        let item = self.items.get(self.pos).copied().ok_or_else(|| Error::Parse {
            line: self.last_line + 1,
            msg: format!("unexpected end of file while reading {what}"),
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        let (tok, line) = self.next(what)?;
        // Fortran-style exponents show up in older files.
        tok.replace(['D', 'd'], "e")
            .parse::<f64>()
            .map_err(|_| Error::Parse { line, msg: format!("expected a number for {what}, found `{tok}`") })
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let (tok, line) = self.next(what)?;
        tok.parse::<usize>()
            .map_err(|_| Error::Parse { line, msg: format!("expected an integer for {what}, found `{tok}`") })
    }

    fn table(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.number(what)).collect()
    }
}

/// Parse a setfl (`eam/alloy` or `eam/fs`) file.
pub fn parse_setfl(text: &str, style: SetflStyle) -> Result<EamTables> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut comments: [String; 3] = Default::default();
    for c in comments.iter_mut() {
        let (_, line) = lines.next().ok_or(Error::Parse { line: 1, msg: "missing comment lines".into() })?;
        *c = line.to_string();
    }
    let (n4, header) = lines.next().ok_or(Error::Parse { line: 4, msg: "missing element line".into() })?;
    let mut head = header.split_whitespace();
    let nel: usize = head
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or(Error::Parse { line: n4, msg: "expected element count".into() })?;
    let symbols: Vec<String> = head.map(str::to_string).collect();
    if nel == 0 || symbols.len() != nel {
        return Err(Error::Parse { line: n4, msg: format!("element count {nel} does not match {} symbols", symbols.len()) });
    }

    let mut tok = Tokens::new(lines);
    let (nrho_line, nrho) = {
        let line = tok.items.get(tok.pos).map_or(tok.last_line + 1, |t| t.1);
        (line, tok.count("Nrho")?)
    };
    let drho = tok.number("drho")?;
    let nr = tok.count("Nr")?;
    let dr = tok.number("dr")?;
    let cutoff = tok.number("cutoff")?;
    if nrho <= 1 || nr <= 1 {
        return Err(Error::Parse { line: nrho_line, msg: format!("table sizes must exceed 1 (Nrho={nrho}, Nr={nr})") });
    }
    if cutoff < 0.0 {
        return Err(Error::Parse { line: nrho_line, msg: format!("negative cutoff {cutoff}") });
    }
    if !(drho > 0.0 && dr > 0.0) {
        return Err(Error::Parse { line: nrho_line, msg: "grid spacings must be positive".into() });
    }

    let per_element_density = match style {
        SetflStyle::Alloy => 1,
        SetflStyle::Fs => nel,
    };
    let mut elements = Vec::with_capacity(nel);
    for e in 0..nel {
        let z = tok.number("atomic number")?;
        let mass = tok.number("mass")?;
        let lattice_constant = tok.number("lattice constant")?;
        let (lattice_type, _) = tok.next("lattice type")?;
        let embedding = tok.table(nrho, &format!("embedding table of {}", symbols[e]))?;
        let density = (0..per_element_density)
            .map(|_| tok.table(nr, &format!("density table of {}", symbols[e])))
            .collect::<Result<_>>()?;
        elements.push(SetflElement {
            atomic_number: z as u32,
            mass,
            lattice_constant,
            lattice_type: lattice_type.to_string(),
            embedding,
            density,
        });
    }
    let mut pair = Vec::new();
    for i in 0..nel {
        for j in 0..=i {
            pair.push(tok.table(nr, &format!("pair table {}-{}", symbols[i], symbols[j]))?);
        }
    }
    Ok(EamTables { style, comments, symbols, nrho, drho, nr, dr, cutoff, elements, pair })
}

/// Serialize tables in setfl layout. Numbers use shortest round-trip
/// formatting so a parse of the output reproduces every value bit for bit.
pub fn write_setfl(t: &EamTables) -> String {
    fn table(out: &mut String, v: &[f64]) {
        for chunk in v.chunks(5) {
            let line: Vec<String> = chunk.iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    let mut out = String::new();
    for c in &t.comments {
        out.push_str(c.trim_end_matches(['\n', '\r']));
        out.push('\n');
    }
    let _ = writeln!(out, "{} {}", t.symbols.len(), t.symbols.join(" "));
    let _ = writeln!(out, "{} {:e} {} {:e} {:e}", t.nrho, t.drho, t.nr, t.dr, t.cutoff);
    for e in &t.elements {
        let _ = writeln!(out, "{} {:e} {:e} {}", e.atomic_number, e.mass, e.lattice_constant, e.lattice_type);
        table(&mut out, &e.embedding);
        for d in &e.density {
            table(&mut out, d);
        }
    }
    for p in &t.pair {
        table(&mut out, p);
    }
    out
}

/// Natural cubic spline on the uniform grid `x_i = i * h`, `i = 0..n`.
/// Outside the grid it continues linearly from the end value and slope.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(h: f64, y: Vec<f64>) -> Result<Self> {
        if y.len() < 2 || !(h > 0.0) {
            return Err(Error::InvalidParameter("spline needs at least two knots and positive spacing".into()));
        }
        let n = y.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on M_{i-1} + 4 M_i + M_{i+1} = 6 (y_{i+1} - 2 y_i + y_{i-1}) / h^2.
            let k = n - 2;
            let mut c = vec![0.0; k];
            let mut d = vec![0.0; k];
            for i in 0..k {
                let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (h * h);
                let denom = 4.0 - if i > 0 { c[i - 1] } else { 0.0 };
                c[i] = 1.0 / denom;
                d[i] = (rhs - if i > 0 { d[i - 1] } else { 0.0 }) / denom;
            }
            for i in (0..k).rev() {
                let next = if i + 1 < k { m[i + 2] } else { 0.0 };
                m[i + 1] = d[i] - c[i] * next;
            }
        }
        Ok(Self { h, y, m })
    }

    pub fn x_max(&self) -> f64 {
        (self.y.len() - 1) as f64 * self.h
    }

    /// Value and first derivative at `x`.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.y.len();
        let h = self.h;
        if x <= 0.0 {
            let (v, s) = self.interval(0, 0.0);
            return (v + s * x, s);
        }
        if x >= self.x_max() {
            let (v, s) = self.interval(n - 2, h);
            return (v + s * (x - self.x_max()), s);
        }
        let i = ((x / h) as usize).min(n - 2);
        self.interval(i, x - i as f64 * h)
    }

    #[inline]
    fn interval(&self, i: usize, t: f64) -> (f64, f64) {
        let h = self.h;
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        let b = (y1 - y0) / h - h * (2.0 * m0 + m1) / 6.0;
        let c = 0.5 * m0;
        let d = (m1 - m0) / (6.0 * h);
        (y0 + t * (b + t * (c + t * d)), b + t * (2.0 * c + 3.0 * t * d))
    }
}

/// Interpolated EAM/FS potential.
#[derive(Clone, Debug)]
pub struct EamFs {
    pub symbols: Vec<String>,
    pub masses: Vec<f64>,
    pub lattice_constants: Vec<f64>,
    pub cutoff: f64,
    pub dr: f64,
    embedding: Vec<CubicSpline>,
    /// `density[source][target]`: contribution of a `source` atom to the density at a `target` atom.
    density: Vec<Vec<CubicSpline>>,
    /// `r * phi(r)`, indexed `[i][j]` symmetrically.
    rphi: Vec<Vec<CubicSpline>>,
}

impl EamFs {
    pub fn from_tables(t: &EamTables) -> Result<Self> {
        let nel = t.symbols.len();
        let embedding = t.elements.iter().map(|e| CubicSpline::new(t.drho, e.embedding.clone())).collect::<Result<_>>()?;
        let mut density = Vec::with_capacity(nel);
        for e in &t.elements {
            let row = (0..nel)
                .map(|j| {
                    let tab = match t.style {
                        SetflStyle::Alloy => &e.density[0],
                        SetflStyle::Fs => &e.density[j],
                    };
                    CubicSpline::new(t.dr, tab.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            density.push(row);
        }
        let mut rphi = vec![Vec::with_capacity(nel); nel];
        let mut flat = Vec::new();
        for i in 0..nel {
            for j in 0..=i {
                flat.push(((i, j), CubicSpline::new(t.dr, t.pair[flat.len()].clone())?));
            }
        }
        for (i, row) in rphi.iter_mut().enumerate() {
            for j in 0..nel {
                let key = (i.max(j), i.min(j));
                row.push(flat.iter().find(|(k, _)| *k == key).expect("pair table present").1.clone());
            }
        }
        Ok(Self {
            symbols: t.symbols.clone(),
            masses: t.elements.iter().map(|e| e.mass).collect(),
            lattice_constants: t.elements.iter().map(|e| e.lattice_constant).collect(),
            cutoff: t.cutoff,
            dr: t.dr,
            embedding,
            density,
            rphi,
        })
    }

    pub fn element_index(&self, symbol: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::InvalidParameter(format!("species `{symbol}` not present in the potential")))
    }

    /// Pair energy and its radial derivative.
    #[inline]
    fn phi(&self, i: usize, j: usize, r: f64) -> (f64, f64) {
        let (z, dz) = self.rphi[i][j].eval(r);
        (z / r, (dz * r - z) / (r * r))
    }
}

struct Neighbour {
    i: usize,
    j: usize,
    r: f64,
    /// Unit vector from `i` to `j`.
    u: Vector3<f64>,
}

/// Total energy (eV) and per-atom forces (eV/Å).
pub fn eam_energy_forces(pot: &EamFs, cell: &Supercell) -> Result<(f64, Vec<Vector3<f64>>)> {
    let elem = cell.species.iter().map(|s| pot.element_index(s)).collect::<Result<Vec<_>>>()?;
    energy_forces_indexed(pot, cell, &elem)
}

fn energy_forces_indexed(pot: &EamFs, cell: &Supercell, elem: &[usize]) -> Result<(f64, Vec<Vector3<f64>>)> {
    let n = cell.n_atoms();
    if pot.cutoff >= 0.5 * cell.min_face_distance() {
        return Err(Error::InvalidParameter(format!(
            "cutoff {} is not below half the smallest cell width {}",
            pot.cutoff,
            cell.min_face_distance()
        )));
    }
    let ct = cell.cell.transpose();
    let inv = ct.try_inverse().ok_or_else(|| Error::InvalidParameter("singular cell".into()))?;
    let mut neigh = Vec::new();
    let mut rho = vec![0.0; n];
    let mut energy = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut f = inv * (cell.positions[j] - cell.positions[i]);
            for k in 0..3 {
                if cell.periodic[k] {
                    f[k] -= f[k].round();
                }
            }
            let d = ct * f;
            let r = d.norm();
            if r >= pot.cutoff {
                continue;
            }
            if r < pot.dr {
                return Err(Error::OutOfRange { r, dr: pot.dr });
            }
            let (ei, ej) = (elem[i], elem[j]);
            rho[i] += pot.density[ej][ei].eval(r).0;
            rho[j] += pot.density[ei][ej].eval(r).0;
            energy += pot.phi(ei, ej, r).0;
            neigh.push(Neighbour { i, j, r, u: d / r });
        }
    }
    let mut dfdrho = vec![0.0; n];
    for i in 0..n {
        let (f, df) = pot.embedding[elem[i]].eval(rho[i]);
        energy += f;
        dfdrho[i] = df;
    }
    let mut forces = vec![Vector3::zeros(); n];
    for nb in &neigh {
        let (ei, ej) = (elem[nb.i], elem[nb.j]);
        let de = pot.phi(ei, ej, nb.r).1
            + dfdrho[nb.i] * pot.density[ej][ei].eval(nb.r).1
            + dfdrho[nb.j] * pot.density[ei][ej].eval(nb.r).1;
        // dE/dx_i = -de * u, dE/dx_j = de * u.
        forces[nb.i] += nb.u * de;
        forces[nb.j] -= nb.u * de;
    }
    Ok((energy, forces))
}

/// EAM potential over the flat `3N` coordinates of a fixed cell.
#[derive(Clone, Debug)]
pub struct EamPotential {
    pub eam: EamFs,
    pub template: Supercell,
    elem: Vec<usize>,
}

impl EamPotential {
    pub fn new(eam: EamFs, template: Supercell) -> Result<Self> {
        let elem = template.species.iter().map(|s| eam.element_index(s)).collect::<Result<Vec<_>>>()?;
        Ok(Self { eam, template, elem })
    }
}

impl PotentialField for EamPotential {
    fn dim(&self) -> usize {
        3 * self.template.n_atoms()
    }

    fn energy_gradient(&self, x: &Vector) -> Result<(f64, Vector)> {
        let cell = self.template.with_flat(x)?;
        let (e, forces) = energy_forces_indexed(&self.eam, &cell, &self.elem)?;
        let g = Vector::from_iterator(x.len(), forces.iter().flat_map(|f| [-f.x, -f.y, -f.z]));
        Ok((e, g))
    }
}

/// Analytic Finnis-Sinclair parametrisation, tabulated into setfl form.
///
/// `phi(r) = (r - c)^2 (c0 + c1 r + c2 r^2)` for `r <= c`,
/// `rho(r) = (r - d)^2 + beta (r - d)^3 / d` for `r <= d`, `F(rho) = -A sqrt(rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FinnisSinclair {
    pub symbol: String,
    pub atomic_number: u32,
    pub mass: f64,
    pub lattice_constant: f64,
    pub d: f64,
    pub a: f64,
    pub beta: f64,
    pub c: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl FinnisSinclair {
    /// The original Finnis-Sinclair (1984) tungsten parameters.
    pub fn tungsten() -> Self {
        Self {
            symbol: "W".into(),
            atomic_number: 74,
            mass: 183.84,
            lattice_constant: 3.1652,
            d: 4.400224,
            a: 1.896373,
            beta: 0.0,
            c: 3.25,
            c0: 47.1346499,
            c1: -33.7665655,
            c2: 6.2541999,
        }
    }

    pub fn phi(&self, r: f64) -> f64 {
        if r > self.c {
            0.0
        } else {
            (r - self.c).powi(2) * (self.c0 + self.c1 * r + self.c2 * r * r)
        }
    }

    pub fn rho(&self, r: f64) -> f64 {
        if r > self.d {
            0.0
        } else {
            let s = r - self.d;
            s * s + self.beta * s.powi(3) / self.d
        }
    }

    pub fn embed(&self, rho: f64) -> f64 {
        -self.a * rho.max(0.0).sqrt()
    }

    pub fn cutoff(&self) -> f64 {
        self.c.max(self.d)
    }

    pub fn tables(&self, nrho: usize, drho: f64, nr: usize, dr: f64) -> EamTables {
        let grid_r = |k: usize| k as f64 * dr;
        EamTables {
            style: SetflStyle::Fs,
            comments: [
                format!("Finnis-Sinclair {} (analytic, tabulated)", self.symbol),
                format!("d={} A={} beta={} c={}", self.d, self.a, self.beta, self.c),
                format!("c0={} c1={} c2={}", self.c0, self.c1, self.c2),
            ],
            symbols: vec![self.symbol.clone()],
            nrho,
            drho,
            nr,
            dr,
            cutoff: self.cutoff(),
            elements: vec![SetflElement {
                atomic_number: self.atomic_number,
                mass: self.mass,
                lattice_constant: self.lattice_constant,
                lattice_type: "bcc".into(),
                embedding: (0..nrho).map(|k| self.embed(k as f64 * drho)).collect(),
                density: vec![(0..nr).map(|k| self.rho(grid_r(k))).collect()],
            }],
            pair: vec![(0..nr).map(|k| grid_r(k) * self.phi(grid_r(k))).collect()],
        }
    }

    /// Tables on the default grid used by the benchmarks.
    pub fn default_tables(&self) -> EamTables {
        self.tables(5000, 0.02, 5000, 0.001)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::build_vacancy_supercell;
    use crate::rng::StreamKey;
    use nalgebra::Matrix3;

    fn zero_alloy(cutoff: f64) -> String {
        let mut s = String::from("c1\nc2\nc3\n1 Xx\n5 0.1 5 0.5 ");
        s.push_str(&format!("{cutoff}\n"));
        s.push_str("26 55.845 2.87 bcc\n0 0 0 0 0\n0 0 0 0 0\n0 0 0 0 0\n");
        s
    }

    #[test]
    fn minimal_alloy_file_parses() {
        let t = parse_setfl(&zero_alloy(1.75), SetflStyle::Alloy).unwrap();
        assert_eq!(t.cutoff, 1.75);
        assert_eq!((t.nrho, t.nr), (5, 5));
        assert_eq!(t.elements[0].lattice_type, "bcc");
        assert_eq!(t.elements[0].atomic_number, 26);
    }

    #[test]
    fn fs_equals_alloy_for_one_element() {
        let a = parse_setfl(&zero_alloy(1.75), SetflStyle::Alloy).unwrap();
        let f = parse_setfl(&zero_alloy(1.75), SetflStyle::Fs).unwrap();
        assert_eq!(a.elements, f.elements);
        assert_eq!(a.pair, f.pair);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let truncated = "c\nc\nc\n1 W\n5 0.1 5 0.5 2.0\n74 1 1 bcc\n1 2 3\n";
        match parse_setfl(truncated, SetflStyle::Alloy) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
        let bad = "c\nc\nc\n1 W\n5 0.1 5 0.5 2.0\n74 1 1 bcc\n1 2 x 4 5\n";
        match parse_setfl(bad, SetflStyle::Alloy) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_setfl("c\nc\nc\n1 W\n1 0.1 5 0.5 2.0\n", SetflStyle::Alloy), Err(Error::Parse { line: 5, .. })));
        assert!(matches!(parse_setfl("c\nc\nc\n1 W\n5 0.1 5 0.5 -2.0\n", SetflStyle::Alloy), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn write_parse_round_trip_is_bitwise() {
        let mut noise = StreamKey::new(3, 0, 0).stream();
        for style in [SetflStyle::Alloy, SetflStyle::Fs] {
            let nel = 2;
            let per = if style == SetflStyle::Fs { nel } else { 1 };
            let mut rnd = |n: usize| (0..n).map(|_| noise.normal() * 1e3f64.powf(noise.uniform())).collect::<Vec<_>>();
            let t = EamTables {
                style,
                comments: ["a".into(), "b b".into(), "".into()],
                symbols: vec!["A".into(), "B".into()],
                nrho: 7,
                drho: 0.013,
                nr: 9,
                dr: 0.0071,
                cutoff: 5.1,
                elements: (0..nel)
                    .map(|e| SetflElement {
                        atomic_number: 10 + e as u32,
                        mass: 1.0 / 3.0,
                        lattice_constant: 2.0f64.sqrt(),
                        lattice_type: "fcc".into(),
                        embedding: rnd(7),
                        density: (0..per).map(|_| rnd(9)).collect(),
                    })
                    .collect(),
                pair: (0..3).map(|_| rnd(9)).collect(),
            };
            let back = parse_setfl(&write_setfl(&t), style).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn spline_reproduces_cubic_interior_and_knots() {
        let y: Vec<f64> = (0..40).map(|i| (0.1 * i as f64).sin()).collect();
        let s = CubicSpline::new(0.1, y.clone()).unwrap();
        for (i, v) in y.iter().enumerate() {
            assert!((s.eval(0.1 * i as f64).0 - v).abs() < 1e-14);
        }
        for k in 0..200 {
            let x = 0.5 + 0.01 * k as f64;
            let (v, dv) = s.eval(x);
            assert!((v - x.sin()).abs() < 1e-5);
            assert!((dv - x.cos()).abs() < 1e-3);
            let h = 1e-6;
            assert!(((s.eval(x + h).0 - s.eval(x - h).0) / (2.0 * h) - dv).abs() < 1e-7);
        }
        // linear continuation
        let (v, dv) = s.eval(10.0);
        let (v0, d0) = s.eval(s.x_max());
        assert!((v - (v0 + d0 * (10.0 - s.x_max()))).abs() < 1e-12 && dv == d0);
    }

    fn fs_w() -> EamFs {
        EamFs::from_tables(&FinnisSinclair::tungsten().default_tables()).unwrap()
    }

    #[test]
    fn isolated_atoms_do_not_interact() {
        let mut text = zero_alloy(1.0);
        text = text.replace("0 0 0 0 0\n0 0 0 0 0\n0 0 0 0 0\n", "0 0.1 0.2 0.3 0.4\n0 0 0 0 0\n0 0 0 0 0\n");
        let t = parse_setfl(&text, SetflStyle::Alloy).unwrap();
        let eam = EamFs::from_tables(&t).unwrap();
        let cell = Supercell {
            cell: Matrix3::identity() * 10.0,
            positions: vec![Vector3::new(1.0, 1.0, 1.0), Vector3::new(4.0, 4.0, 4.0)],
            species: vec!["Xx".into(); 2],
            periodic: [true; 3],
            frozen: vec![false; 2],
            vacancy_site: None,
        };
        let (e, f) = eam_energy_forces(&eam, &cell).unwrap();
        assert_eq!(e, 0.0);
        assert!(f.iter().all(|v| v.norm() == 0.0));
    }

    fn perturbed_cell(seed: u64) -> Supercell {
        let (mut cell, _) = build_vacancy_supercell(2, 3.1652 * 1.45, "W").unwrap();
        cell.positions.push(Vector3::new(0.2, 0.3, 0.1) * 3.1652);
        cell.species.push("W".into());
        cell.frozen.push(false);
        let mut s = StreamKey::new(seed, 0, 0).stream();
        for p in cell.positions.iter_mut() {
            *p += Vector3::new(s.normal(), s.normal(), s.normal()) * 0.1;
        }
        cell
    }

    #[test]
    fn forces_match_finite_differences() {
        let eam = fs_w();
        let cell = perturbed_cell(11);
        assert_eq!(cell.n_atoms(), 16);
        let pot = EamPotential::new(eam, cell.clone()).unwrap();
        let x = cell.to_flat();
        let g = pot.gradient(&x).unwrap();
        let fd = crate::potentials::finite_difference_gradient(&pot, &x, 1e-5).unwrap();
        assert!((g - fd).amax() <= 1e-5);
    }

    #[test]
    fn forces_sum_to_zero_and_shift_invariance() {
        let eam = fs_w();
        let cell = perturbed_cell(5);
        let (e, f) = eam_energy_forces(&eam, &cell).unwrap();
        let total: Vector3<f64> = f.iter().sum();
        assert!(total.amax() < 1e-9);
        let mut shifted = cell.clone();
        for p in shifted.positions.iter_mut() {
            *p += Vector3::new(0.37, -1.2, 5.5);
        }
        assert!((eam_energy_forces(&eam, &shifted).unwrap().0 - e).abs() < 1e-10);
    }

    #[test]
    fn close_contact_is_an_error() {
        let eam = fs_w();
        let mut cell = perturbed_cell(1);
        cell.positions[1] = cell.positions[0] + Vector3::new(1e-4, 0.0, 0.0);
        assert!(matches!(eam_energy_forces(&eam, &cell), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn cutoff_must_fit_in_cell() {
        let eam = fs_w();
        let (cell, _) = build_vacancy_supercell(2, 3.1652, "W").unwrap();
        assert!(eam_energy_forces(&eam, &cell).is_err());
    }

    #[test]
    fn perfect_bcc_is_force_free() {
        let eam = fs_w();
        let (mut cell, hop) = build_vacancy_supercell(3, 3.1652, "W").unwrap();
        cell.positions.push(hop.vacancy_site);
        cell.species.push("W".into());
        let (_, f) = eam_energy_forces(&eam, &cell).unwrap();
        assert!(f.iter().all(|v| v.norm() < 1e-10));
    }
}
