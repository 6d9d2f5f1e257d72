use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::dimer::{run_dimer, DimerRegistry, DimerRunConfig, DimerState};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::neb::{band_metrics, neb_residual, optimizer_field, run_neb, Band, NebParams, NebRegistry, NebRunConfig, NebVariant};
use crate::potentials::{AnalyticDoubleWell, CovarianceField, StochasticForceOracle, TubeField2D};

use super::config::{ExperimentConfig, ExperimentDefaults};
use super::projdemo::ProjectionDemo;
use super::report::{num, ExperimentReport, SeedRecord};
use super::stats::{error_decomposition, hodges_lehmann, loglog_slope, mean, sem, wilcoxon_one_sided};
use super::wvac::WvacExperiment;

/// One benchmark, selected by name on the command line.
pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    fn defaults(&self) -> ExperimentDefaults;

    fn run(&self, cfg: &ExperimentConfig) -> Result<ExperimentReport>;
}

#[derive(Clone)]
pub struct ExperimentRegistry {
    entries: BTreeMap<String, Arc<dyn Experiment>>,
}

impl ExperimentRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(Neb2d));
        r.register(Arc::new(Sweep2d));
        r.register(Arc::new(Dimer2d));
        r.register(Arc::new(Rate2d));
        r.register(Arc::new(ProjectionDemo));
        r.register(Arc::new(WvacExperiment));
        r
    }

    pub fn register(&mut self, e: Arc<dyn Experiment>) {
        self.entries.insert(e.name().to_string(), e);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Experiment>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown experiment `{name}` (known: {})", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn defaults(&self, name: &str) -> Result<ExperimentDefaults> {
        Ok(self.get(name)?.defaults())
    }
}

/// Run `cfg` on a pool of `threads` workers (all cores when `None`).
pub fn run_experiment(registry: &ExperimentRegistry, cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    let exp = registry.get(&cfg.experiment)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("thread budget must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let mut report = pool.install(|| exp.run(cfg))?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

pub const NEB_VARIANTS: &[&str] = &["std", "pen", "al", "metric", "diag", "ua"];

fn neb2d_defaults(seeds: usize, iterations: usize, variants: &'static [&'static str]) -> ExperimentDefaults {
    ExperimentDefaults { seeds, iterations, variants, noise_multiplier: 10.0, neb: NebParams::default() }
}

/// Common header of every summary.
pub(crate) fn base_summary(report: &mut ExperimentReport, cfg: &ExperimentConfig) -> Result<()> {
    report.insert("experiment", json!(cfg.experiment));
    report.insert("provenance", json!(format!("saddlekit {}", env!("CARGO_PKG_VERSION"))));
    report.insert("config", serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?);
    Ok(())
}

pub(crate) fn neb_variants(cfg: &ExperimentConfig) -> Result<Vec<Arc<dyn NebVariant>>> {
    let reg = NebRegistry::builtin();
    cfg.variants.iter().map(|v| reg.get(v)).collect()
}

/// The variant that paired comparisons are made against.
pub(crate) fn baseline(variants: &[String]) -> String {
    if variants.iter().any(|v| v == "std") { "std".into() } else { variants[0].clone() }
}

/// Mean, SEM, ratio to the baseline and paired tests of `values[variant][seed]`.
pub(crate) fn paired_summary(variants: &[String], values: &BTreeMap<String, Vec<f64>>, key: &str) -> Result<(Value, Value)> {
    let base = baseline(variants);
    let base_mean = mean(&values[&base]);
    let mut agg = Map::new();
    let mut stats = Map::new();
    for v in variants {
        let xs = &values[v];
        agg.insert(
            v.clone(),
            json!({
                format!("mean_{key}"): num(mean(xs)),
                format!("sem_{key}"): num(sem(xs)),
                "ratio_to_baseline": num(mean(xs) / base_mean),
            }),
        );
        if *v != base {
            let diffs: Vec<f64> = values[&base].iter().zip(xs).map(|(b, x)| b - x).collect();
            stats.insert(
                format!("{v}_vs_{base}"),
                json!({
                    "wilcoxon_p_one_sided": num(wilcoxon_one_sided(&diffs)),
                    "hodges_lehmann": num(hodges_lehmann(&diffs)?),
                    "n_improved": diffs.iter().filter(|d| **d > 0.0).count(),
                }),
            );
        }
    }
    Ok((Value::Object(agg), Value::Object(stats)))
}

/// The analytic problem with a given covariance tube.
pub struct Analytic2d {
    pub potential: Arc<AnalyticDoubleWell>,
    pub tube: Arc<dyn CovarianceField>,
    pub band: Band,
}

impl Analytic2d {
    pub fn new(cfg: &ExperimentConfig, tube: TubeField2D) -> Result<Self> {
        let potential = Arc::new(AnalyticDoubleWell::default());
        let (a, b) = potential.minima();
        let mut band = Band::linear(&a, &b, cfg.neb.n_images)?;
        band.refresh_energies(potential.as_ref())?;
        Ok(Self { potential, tube: Arc::new(tube), band })
    }

    pub fn oracle(&self, m: f64, seed: u64) -> StochasticForceOracle {
        StochasticForceOracle::new(self.potential.clone(), self.tube.clone(), m, seed)
    }
}

/// Per-seed result of one band run.
pub(crate) struct NebSeedRun {
    pub barrier_error: Vec<f64>,
    pub residual: Vec<f64>,
    pub final_residual: f64,
    pub final_barrier: f64,
}

pub(crate) fn run_neb_seed(
    problem: &Analytic2d,
    cfg: &ExperimentConfig,
    variant: &dyn NebVariant,
    seed: u64,
    m: f64,
    iterations: usize,
    record_residual: bool,
) -> Result<NebSeedRun> {
    let oracle = problem.oracle(m, seed);
    let params = NebParams { variant: variant.name().into(), ..cfg.neb.clone() };
    let run_cfg = NebRunConfig { iterations, record_residual, record_digests: false };
    let out = run_neb(&problem.band, &oracle, variant, &params, &run_cfg)?;
    let barrier = out.band.barrier();
    let final_residual = match out.trace.residual.last() {
        Some(r) => *r,
        None => {
            let scaled = params.scaled_for(m);
            let metrics = band_metrics(&out.band, optimizer_field(&oracle).as_ref(), variant, &scaled)?;
            neb_residual(&out.band, problem.potential.as_ref(), &metrics, &scaled)?
        }
    };
    Ok(NebSeedRun {
        barrier_error: out.trace.barrier.iter().map(|b| (b - 1.0).abs()).collect(),
        residual: out.trace.residual,
        final_residual,
        final_barrier: barrier,
    })
}

/// Analytic NEB benchmark.
pub struct Neb2d;

impl Experiment for Neb2d {
    fn name(&self) -> &'static str {
        "neb2d"
    }

    fn defaults(&self) -> ExperimentDefaults {
        neb2d_defaults(200, 500, NEB_VARIANTS)
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
        let problem = Analytic2d::new(cfg, cfg.tube.clone())?;
        let variants = neb_variants(cfg)?;
        let seeds = cfg.seed_list();
        let runs: Vec<Vec<NebSeedRun>> = seeds
            .par_iter()
            .map(|&s| {
                variants
                    .iter()
                    .map(|v| run_neb_seed(&problem, cfg, v.as_ref(), s, cfg.noise_multiplier, cfg.iterations, false))
                    .collect()
            })
            .collect::<Result<_>>()?;
        // the mean-potential target: the same band optimizer without noise
        let target = run_neb_seed(&problem, cfg, variants[0].as_ref(), 0, 0.0, cfg.iterations, false)?.final_barrier;

        let mut report = ExperimentReport::new(self.name());
        let mut errors = BTreeMap::new();
        let mut decomposition = Map::new();
        for (j, v) in cfg.variants.iter().enumerate() {
            let mut finals = Vec::with_capacity(seeds.len());
            let mut barriers = Vec::with_capacity(seeds.len());
            for (i, &s) in seeds.iter().enumerate() {
                let r = &runs[i][j];
                let e = *r.barrier_error.last().unwrap_or(&f64::NAN);
                finals.push(e);
                barriers.push(r.final_barrier);
                report.seeds.push(SeedRecord {
                    variant: v.clone(),
                    seed: s,
                    final_barrier_error: Some(e),
                    final_residual: Some(r.final_residual),
                    success: None,
                });
            }
            let rows: Vec<Vec<f64>> = runs.iter().map(|r| r[j].barrier_error.clone()).collect();
            report.push_trajectory(v, &rows);
            if barriers.len() >= 2 {
                let d = error_decomposition(&barriers, target, 1.0)?;
                decomposition.insert(
                    v.clone(),
                    json!({
                        "statistical": num(d.statistical),
                        "optimization": num(d.optimization),
                        "model": num(d.model),
                        "rms": num(d.rms),
                        "bound_holds": d.bound_holds(),
                    }),
                );
            }
            errors.insert(v.clone(), finals);
        }
        let (agg, stats) = paired_summary(&cfg.variants, &errors, "final_barrier_error")?;
        base_summary(&mut report, cfg)?;
        report.insert("aggregates", agg);
        report.insert("statistics", stats);
        report.insert("mean_target_barrier", num(target));
        report.insert("reference_barrier", num(1.0));
        report.insert("decomposition", Value::Object(decomposition));
        Ok(report)
    }
}

/// Covariance-structure sweep over tube rotation and normal amplitude.
pub struct Sweep2d;

impl Experiment for Sweep2d {
    fn name(&self) -> &'static str {
        "sweep2d"
    }

    fn defaults(&self) -> ExperimentDefaults {
        neb2d_defaults(16, 500, &["std", "diag", "ua"])
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
        let variants = neb_variants(cfg)?;
        let names = &cfg.variants;
        let seeds = cfg.seed_list();
        let mut cells = Vec::new();
        for &theta in &cfg.sweep.thetas {
            for &sn in &cfg.sweep.sigma_n {
                cells.push((theta, sn));
            }
        }
        let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
        let problems: Vec<Analytic2d> = cells
            .iter()
            .map(|&(theta, sn)| Analytic2d::new(cfg, TubeField2D { rotation_theta: theta, sigma_n_amp: sn, ..cfg.tube.clone() }))
            .collect::<Result<_>>()?;
        let results: Vec<Vec<f64>> = jobs
            .par_iter()
            .map(|&(c, s)| {
                variants
                    .iter()
                    .map(|v| {
                        let r = run_neb_seed(&problems[c], cfg, v.as_ref(), s, cfg.noise_multiplier, cfg.iterations, false)?;
                        Ok(*r.barrier_error.last().unwrap_or(&f64::NAN))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        let mut report = ExperimentReport::new(self.name());
        let idx = |n: &str| names.iter().position(|v| v == n);
        let (i_std, i_diag, i_ua) = (idx("std"), idx("diag"), idx("ua"));
        let mut grid = Vec::new();
        let (mut beats_std, mut beats_diag) = (0usize, 0usize);
        for (c, &(theta, sn)) in cells.iter().enumerate() {
            let per: Vec<Vec<f64>> = (0..names.len())
                .map(|j| jobs.iter().zip(&results).filter(|((cc, _), _)| *cc == c).map(|(_, r)| r[j]).collect())
                .collect();
            for (j, v) in names.iter().enumerate() {
                for (k, &s) in seeds.iter().enumerate() {
                    report.seeds.push(SeedRecord {
                        variant: format!("{v}:theta={}:sigma_n={}", super::report::fmt12(theta), super::report::fmt12(sn)),
                        seed: s,
                        final_barrier_error: Some(per[j][k]),
                        final_residual: None,
                        success: None,
                    });
                }
            }
            let mut cell = Map::new();
            cell.insert("theta".into(), num(theta));
            cell.insert("sigma_n".into(), num(sn));
            for (j, v) in names.iter().enumerate() {
                cell.insert(format!("mean_{v}"), num(mean(&per[j])));
            }
            if let (Some(a), Some(u)) = (i_std, i_ua) {
                let (ms, mu) = (mean(&per[a]), mean(&per[u]));
                let diffs: Vec<f64> = per[a].iter().zip(&per[u]).map(|(x, y)| x - y).collect();
                cell.insert("ua_improvement_vs_std".into(), num(1.0 - mu / ms));
                cell.insert("ua_vs_std_neg_log10_p".into(), num(-wilcoxon_one_sided(&diffs).log10()));
                if mu < ms {
                    beats_std += 1;
                }
            }
            if let (Some(d), Some(u)) = (i_diag, i_ua) {
                let (md, mu) = (mean(&per[d]), mean(&per[u]));
                cell.insert("ua_improvement_vs_diag".into(), num(1.0 - mu / md));
                if mu < md {
                    beats_diag += 1;
                }
            }
            grid.push(Value::Object(cell));
        }
        base_summary(&mut report, cfg)?;
        report.insert("cells", json!(cells.len()));
        report.insert("ua_beats_std_cells", json!(beats_std));
        report.insert("ua_beats_diag_cells", json!(beats_diag));
        report.insert("grid", Value::Array(grid));
        Ok(report)
    }
}

/// Residual-rate diagnostic.
pub struct Rate2d;

/// Iteration window of the slope fit.
pub const RATE_WINDOW: (usize, usize) = (5, 40);

impl Experiment for Rate2d {
    fn name(&self) -> &'static str {
        "rate2d"
    }

    fn defaults(&self) -> ExperimentDefaults {
        neb2d_defaults(80, 60, NEB_VARIANTS)
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
        let problem = Analytic2d::new(cfg, cfg.tube.clone())?;
        let variants = neb_variants(cfg)?;
        let seeds = cfg.seed_list();
        let runs: Vec<Vec<NebSeedRun>> = seeds
            .par_iter()
            .map(|&s| {
                variants
                    .iter()
                    .map(|v| run_neb_seed(&problem, cfg, v.as_ref(), s, cfg.noise_multiplier, cfg.iterations, true))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut report = ExperimentReport::new(self.name());
        let mut slopes = Map::new();
        for (j, v) in cfg.variants.iter().enumerate() {
            let rows: Vec<Vec<f64>> = runs.iter().map(|r| r[j].residual.clone()).collect();
            for (i, &s) in seeds.iter().enumerate() {
                report.seeds.push(SeedRecord {
                    variant: v.clone(),
                    seed: s,
                    final_barrier_error: runs[i][j].barrier_error.last().copied(),
                    final_residual: Some(runs[i][j].final_residual),
                    success: None,
                });
            }
            let means: Vec<f64> = (0..rows[0].len()).map(|k| mean(&rows.iter().map(|r| r[k]).collect::<Vec<_>>())).collect();
            report.push_trajectory(v, &rows);
            let (lo, hi) = RATE_WINDOW;
            let mut entry = Map::new();
            if means.len() > hi {
                let ks: Vec<f64> = (lo..=hi).map(|k| k as f64).collect();
                entry.insert("slope".into(), num(loglog_slope(&ks, &means[lo..=hi])?));
            }
            if means.len() > 60 {
                entry.insert("plateau_ratio_60_over_50".into(), num(means[60] / means[50]));
            }
            slopes.insert(v.clone(), Value::Object(entry));
        }
        base_summary(&mut report, cfg)?;
        report.insert("fit_window", json!([RATE_WINDOW.0, RATE_WINDOW.1]));
        report.insert("slopes", Value::Object(slopes));
        Ok(report)
    }
}

/// Dimer refinement benchmark.
pub struct Dimer2d;

pub const DIMER_START: [f64; 2] = [-0.62, 0.02];
pub const DIMER_DIRECTION: [f64; 2] = [0.8, 0.6];

impl Experiment for Dimer2d {
    fn name(&self) -> &'static str {
        "dimer2d"
    }

    fn defaults(&self) -> ExperimentDefaults {
        ExperimentDefaults {
            seeds: 200,
            iterations: 260,
            variants: &["std", "ua"],
            noise_multiplier: 3.0,
            neb: NebParams::default(),
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
        let reg = DimerRegistry::builtin();
        let variants = cfg.variants.iter().map(|v| reg.get(v)).collect::<Result<Vec<_>>>()?;
        let potential = Arc::new(AnalyticDoubleWell::default());
        let saddle = potential.saddle();
        let tube: Arc<dyn CovarianceField> = Arc::new(cfg.tube.clone());
        let start = DimerState::new(Vector::from_row_slice(&DIMER_START), Vector::from_row_slice(&DIMER_DIRECTION), &cfg.dimer)?;
        let run_cfg = DimerRunConfig { iterations: cfg.iterations, record_digests: false };
        let seeds = cfg.seed_list();
        let runs: Vec<Vec<(Vec<f64>, f64)>> = seeds
            .par_iter()
            .map(|&s| {
                variants
                    .iter()
                    .map(|v| {
                        let oracle = StochasticForceOracle::new(potential.clone(), tube.clone(), cfg.noise_multiplier, s);
                        let params = crate::dimer::DimerParams { variant: v.name().into(), ..cfg.dimer.clone() };
                        let out = run_dimer(&start, &oracle, v.as_ref(), &params, &run_cfg)?;
                        Ok((out.trace.reflected, (&out.state.x - &saddle).norm()))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut report = ExperimentReport::new(self.name());
        let mut residuals = BTreeMap::new();
        let mut success = Map::new();
        for (j, v) in cfg.variants.iter().enumerate() {
            let mut finals = Vec::new();
            let mut hits = 0usize;
            for (i, &s) in seeds.iter().enumerate() {
                let (traj, dist) = &runs[i][j];
                let r = *traj.last().unwrap_or(&f64::NAN);
                let ok = *dist <= cfg.success_radius;
                hits += ok as usize;
                finals.push(r);
                report.seeds.push(SeedRecord {
                    variant: v.clone(),
                    seed: s,
                    final_barrier_error: None,
                    final_residual: Some(r),
                    success: Some(ok),
                });
            }
            let rows: Vec<Vec<f64>> = runs.iter().map(|r| r[j].0.clone()).collect();
            report.push_trajectory(v, &rows);
            success.insert(v.clone(), num(hits as f64 / seeds.len() as f64));
            residuals.insert(v.clone(), finals);
        }
        let (agg, stats) = paired_summary(&cfg.variants, &residuals, "final_residual")?;
        base_summary(&mut report, cfg)?;
        report.insert("aggregates", agg);
        report.insert("statistics", stats);
        report.insert("success_rate", Value::Object(success));
        report.insert("success_radius", num(cfg.success_radius));
        Ok(report)
    }
}
