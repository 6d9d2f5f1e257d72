use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::neb::{run_neb, Band, NebParams, NebRegistry, NebRunConfig};
use crate::potentials::{
    build_vacancy_supercell, parse_setfl, CoreField3D, EamFs, EamPotential, EamTables, FinnisSinclair, HopPair,
    PotentialField, SetflStyle, StochasticForceOracle, Supercell,
};

use super::config::{ExperimentConfig, ExperimentDefaults, WvacSettings};
use super::experiments::{base_summary, neb_variants, paired_summary, Experiment};
use super::report::{num, ExperimentReport, SeedRecord};
use super::stats::{error_decomposition, wilcoxon_one_sided};

/// Environment variable naming a setfl file when the config has none.
pub const SETFL_ENV: &str = "SADDLEKIT_SETFL";

/// Result of a FIRE relaxation.
#[derive(Clone, Debug)]
pub struct Relaxed {
    pub x: Vector,
    pub energy: f64,
    /// Largest per-atom force norm at `x`.
    pub max_force: f64,
    pub steps: usize,
}

fn max_atom_force(g: &Vector) -> f64 {
    g.as_slice().chunks(3).map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()).fold(0.0, f64::max)
}

/// FIRE minimisation with unit masses until every per-atom force is below `tol`.
pub fn fire_relax(pot: &dyn PotentialField, x0: &Vector, tol: f64, max_steps: usize) -> Result<Relaxed> {
    const DT_MAX: f64 = 0.1;
    const MAX_MOVE: f64 = 0.1;
    let (f_inc, f_dec, alpha0, f_alpha, n_min): (f64, f64, f64, f64, usize) = (1.1, 0.5, 0.1, 0.99, 5);
    let mut x = x0.clone();
    let mut v = Vector::zeros(x.len());
    let (mut dt, mut alpha, mut since_neg) = (0.02, alpha0, 0usize);
    let (mut e, mut g) = pot.energy_gradient(&x)?;
    for step in 0..max_steps {
        let fmax = max_atom_force(&g);
        if fmax <= tol {
            return Ok(Relaxed { x, energy: e, max_force: fmax, steps: step });
        }
        let f = -&g;
        let p = f.dot(&v);
        if p > 0.0 {
            let (vn, fnorm) = (v.norm(), f.norm());
            v = &v * (1.0 - alpha) + &f * (alpha * vn / fnorm);
            since_neg += 1;
            if since_neg > n_min {
                dt = (dt * f_inc).min(DT_MAX);
                alpha *= f_alpha;
            }
        } else {
            v.fill(0.0);
            dt *= f_dec;
            alpha = alpha0;
            since_neg = 0;
        }
        v += &f * dt;
        let mut dx = &v * dt;
        let n = dx.norm();
        if n > MAX_MOVE {
            dx *= MAX_MOVE / n;
        }
        x += dx;
        (e, g) = pot.energy_gradient(&x)?;
        if !e.is_finite() {
            return Err(Error::NonFinite("endpoint relaxation"));
        }
    }
    Err(Error::Convergence {
        what: "endpoint relaxation",
        detail: format!("max force {:.3e} eV/Å after {max_steps} steps (tolerance {tol:e})", max_atom_force(&g)),
    })
}

/// Relaxed endpoints, potential and covariance model of the vacancy hop.
pub struct WvacSetup {
    pub potential: Arc<EamPotential>,
    pub field: Arc<CoreField3D>,
    pub template: Supercell,
    pub hop: HopPair,
    pub start: Relaxed,
    pub end: Relaxed,
    /// Where the tables came from.
    pub source: String,
}

/// `eam/fs` for a `.fs` extension, `eam/alloy` otherwise.
pub fn setfl_style(path: &Path) -> SetflStyle {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("fs") => SetflStyle::Fs,
        _ => SetflStyle::Alloy,
    }
}

pub fn load_setfl(path: &Path) -> Result<EamTables> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_setfl(&text, setfl_style(path))
}

/// The setfl file to use: the config value, else [`SETFL_ENV`].
pub fn setfl_path(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.setfl.clone().or_else(|| std::env::var_os(SETFL_ENV).filter(|s| !s.is_empty()).map(PathBuf::from))
}

fn flat_atom(x: &Vector, i: usize) -> Vector3<f64> {
    Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
}

/// Build and relax both ends of the hop.
pub fn wvac_setup(tables: &EamTables, source: String, s: &WvacSettings) -> Result<WvacSetup> {
    if tables.symbols.len() != 1 {
        return Err(Error::Config(format!("the vacancy benchmark needs a single-element potential, got {:?}", tables.symbols)));
    }
    let a0 = tables.elements[0].lattice_constant;
    if !(a0 > 0.0) {
        return Err(Error::Config(format!("potential lists lattice constant {a0}")));
    }
    let (template, hop) = build_vacancy_supercell(s.n_cells, a0, &tables.symbols[0])?;
    let potential = Arc::new(EamPotential::new(EamFs::from_tables(tables)?, template.clone())?);
    let m = hop.migrating_atom;

    let start = fire_relax(potential.as_ref(), &template.to_flat(), s.relax_tol, s.relax_max_steps)?;
    let mut moved = start.x.clone();
    for k in 0..3 {
        moved[3 * m + k] = hop.vacancy_site[k];
    }
    let end = fire_relax(potential.as_ref(), &moved, s.relax_tol, s.relax_max_steps)?;

    let (p0, p1) = (flat_atom(&start.x, m), flat_atom(&end.x, m));
    let d = template.minimum_image(p1 - p0);
    let field = CoreField3D {
        core_center: p0 + d * 0.5,
        hop_axis: d.normalize(),
        core_radius: s.core_radius,
        midpoint_width: s.midpoint_width,
        floor: s.floor,
        parallel_amp: s.parallel_amp,
        transverse_amp: s.transverse_amp,
        migrating_atom: m,
        hop_start: p0,
        hop_length: d.norm(),
        cell: template.cell,
        n_atoms: template.n_atoms(),
    };
    Ok(WvacSetup { potential, field: Arc::new(field), template, hop, start, end, source })
}

/// Set up from the configured setfl file, or from the built-in
/// Finnis-Sinclair tungsten tables when none is given.
pub fn wvac_setup_from_config(cfg: &ExperimentConfig) -> Result<WvacSetup> {
    let (tables, source) = match setfl_path(cfg) {
        Some(p) => (load_setfl(&p)?, p.display().to_string()),
        None => (FinnisSinclair::tungsten().default_tables(), "builtin Finnis-Sinclair tungsten".to_string()),
    };
    wvac_setup(&tables, source, &cfg.wvac)
}

impl WvacSetup {
    pub fn initial_band(&self, n_images: usize) -> Result<Band> {
        let mut band = Band::linear(&self.start.x, &self.end.x, n_images)?;
        band.refresh_energies(self.potential.as_ref())?;
        Ok(band)
    }

    pub fn oracle(&self, m: f64, seed: u64) -> StochasticForceOracle {
        StochasticForceOracle::new(self.potential.clone(), self.field.clone(), m, seed).with_mask(self.template.free_mask())
    }

    /// Deterministic band run whose barrier is the reference.
    pub fn reference(&self, neb: &NebParams, iterations: usize) -> Result<Band> {
        let std = NebRegistry::builtin().get("std")?;
        let params = NebParams { variant: "std".into(), ..neb.clone() };
        let cfg = NebRunConfig { iterations, ..Default::default() };
        Ok(run_neb(&self.initial_band(neb.n_images)?, &self.oracle(0.0, 0), std.as_ref(), &params, &cfg)?.band)
    }
}

/// Band settings of the vacancy benchmark.
pub fn wvac_neb_params() -> NebParams {
    NebParams {
        n_images: 7,
        k_s: 1.1,
        alpha: 0.018,
        trust_radius: 0.055,
        lambda: 0.020,
        gamma0: 0.0,
        ..NebParams::default()
    }
}

/// Atomistic bcc vacancy-hop benchmark. Errors are in meV.
pub struct WvacExperiment;

impl Experiment for WvacExperiment {
    fn name(&self) -> &'static str {
        "wvac"
    }

    fn defaults(&self) -> ExperimentDefaults {
        ExperimentDefaults {
            seeds: 24,
            iterations: 340,
            variants: &["std", "diag", "ua"],
            noise_multiplier: 1.0,
            neb: wvac_neb_params(),
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
        let variants = neb_variants(cfg)?;
        let setup = wvac_setup_from_config(cfg)?;
        let reference_band = setup.reference(&cfg.neb, cfg.wvac.reference_iterations)?;
        let reference = reference_band.barrier();
        let initial = setup.initial_band(cfg.neb.n_images)?;
        let seeds = cfg.seed_list();
        let run_cfg = NebRunConfig { iterations: cfg.iterations, ..Default::default() };
        let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..variants.len()).map(move |j| (s, j))).collect();
        let results: Vec<(Vec<f64>, f64)> = jobs
            .par_iter()
            .map(|&(s, j)| {
                let v = variants[j].as_ref();
                let params = NebParams { variant: v.name().into(), ..cfg.neb.clone() };
                let out = run_neb(&initial, &setup.oracle(cfg.noise_multiplier, s), v, &params, &run_cfg)?;
                let errors = out.trace.barrier.iter().map(|b| 1e3 * (b - reference).abs()).collect();
                Ok((errors, out.band.barrier()))
            })
            .collect::<Result<_>>()?;

        let mut report = ExperimentReport::new(self.name());
        let mut errors = std::collections::BTreeMap::new();
        let mut decomposition = Map::new();
        for (j, v) in cfg.variants.iter().enumerate() {
            let mine: Vec<&(Vec<f64>, f64)> = results.iter().zip(&jobs).filter(|(_, jb)| jb.1 == j).map(|(r, _)| r).collect();
            let finals: Vec<f64> = mine.iter().map(|r| *r.0.last().unwrap_or(&f64::NAN)).collect();
            for (&s, &e) in seeds.iter().zip(&finals) {
                report.seeds.push(SeedRecord { variant: v.clone(), seed: s, final_barrier_error: Some(e), final_residual: None, success: None });
            }
            let rows: Vec<Vec<f64>> = mine.iter().map(|r| r.0.clone()).collect();
            report.push_trajectory(v, &rows);
            if seeds.len() >= 2 {
                let barriers: Vec<f64> = mine.iter().map(|r| 1e3 * r.1).collect();
                let d = error_decomposition(&barriers, 1e3 * reference, 1e3 * reference)?;
                decomposition.insert(
                    v.clone(),
                    json!({"statistical_meV": num(d.statistical), "optimization_meV": num(d.optimization), "model_meV": num(d.model), "rms_meV": num(d.rms), "bound_holds": d.bound_holds()}),
                );
            }
            errors.insert(v.clone(), finals);
        }
        let (agg, stats) = paired_summary(&cfg.variants, &errors, "final_barrier_error_meV")?;

        // ordering and sign checks between consecutive variants of `ua < diag < std`
        let mut ordering = Map::new();
        for (better, worse) in [("ua", "diag"), ("diag", "std"), ("ua", "std")] {
            if let (Some(b), Some(w)) = (errors.get(better), errors.get(worse)) {
                let diffs: Vec<f64> = w.iter().zip(b).map(|(w, b)| w - b).collect();
                let uniform = diffs.iter().all(|d| *d > 0.0) || diffs.iter().all(|d| *d < 0.0);
                ordering.insert(
                    format!("{better}_lt_{worse}"),
                    json!({
                        "mean_lower": super::stats::mean(b) < super::stats::mean(w),
                        "uniform_sign": uniform,
                        "wilcoxon_p_one_sided": num(wilcoxon_one_sided(&diffs)),
                    }),
                );
            }
        }

        let mean = setup.potential.as_ref();
        let e0 = mean.energy(&reference_band.images[0])?;
        let profile: Vec<Value> = reference_band
            .images
            .iter()
            .map(|x| Ok(json!({"progress": num(setup.field.progress(x)), "energy_eV": num(mean.energy(x)? - e0)})))
            .collect::<Result<_>>()?;

        base_summary(&mut report, cfg)?;
        report.insert("potential_source", json!(setup.source));
        report.insert("n_atoms", json!(setup.template.n_atoms()));
        report.insert("endpoint_relaxation_steps", json!([setup.start.steps, setup.end.steps]));
        report.insert("endpoint_max_force_eV_per_A", json!([num(setup.start.max_force), num(setup.end.max_force)]));
        report.insert("reference_barrier_eV", num(reference));
        report.insert("aggregates", agg);
        report.insert("statistics", stats);
        report.insert("ordering", Value::Object(ordering));
        report.insert("decomposition", Value::Object(decomposition));
        report.insert(
            "progress_definition",
            json!("presumed analogue of migrating-atom progress: displacement of the migrating atom projected on the hop axis, divided by the hop length"),
        );
        report.insert("reference_profile", Value::Array(profile));
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::finite_difference_gradient;

    #[test]
    fn fire_finds_a_quadratic_minimum() {
        struct Bowl;
        impl PotentialField for Bowl {
            fn dim(&self) -> usize {
                6
            }
            fn energy_gradient(&self, x: &Vector) -> Result<(f64, Vector)> {
                let w = Vector::from_fn(6, |i, _| (i + 1) as f64);
                let g = x.component_mul(&w);
                Ok((0.5 * x.dot(&g), g))
            }
        }
        let r = fire_relax(&Bowl, &Vector::from_element(6, 0.7), 1e-8, 10_000).unwrap();
        assert!(r.x.norm() < 1e-7);
        assert!(fire_relax(&Bowl, &Vector::from_element(6, 0.7), 1e-8, 3).is_err());
    }

    #[test]
    fn small_cell_hop_setup() {
        let s = WvacSettings { n_cells: 3, ..WvacSettings::default() };
        let setup = wvac_setup(&FinnisSinclair::tungsten().default_tables(), "fs".into(), &s).unwrap();
        assert!(setup.start.max_force <= s.relax_tol && setup.end.max_force <= s.relax_tol);
        // the two ends are images of each other under the bcc symmetry
        assert!((setup.start.energy - setup.end.energy).abs() < 1e-6);
        assert!((setup.field.progress(&setup.start.x)).abs() < 1e-12);
        assert!((setup.field.progress(&setup.end.x) - 1.0).abs() < 1e-12);
        let g = setup.potential.gradient(&setup.start.x).unwrap();
        let fd = finite_difference_gradient(setup.potential.as_ref(), &setup.start.x, 1e-5).unwrap();
        assert!((g - fd).amax() < 1e-5);
    }

    #[test]
    fn setfl_style_follows_the_extension() {
        assert_eq!(setfl_style(Path::new("W.eam.fs")), SetflStyle::Fs);
        assert_eq!(setfl_style(Path::new("W.eam.alloy")), SetflStyle::Alloy);
        assert_eq!(setfl_style(Path::new("W_2017")), SetflStyle::Alloy);
    }

    #[test]
    fn multi_element_files_are_rejected() {
        let mut t = FinnisSinclair::tungsten().default_tables();
        t.symbols.push("Mo".into());
        assert!(matches!(wvac_setup(&t, "x".into(), &WvacSettings::default()), Err(Error::Config(_))));
    }
}
