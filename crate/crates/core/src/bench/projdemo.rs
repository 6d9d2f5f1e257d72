use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::neb::NebParams;

use super::config::{ExperimentConfig, ExperimentDefaults};
use super::experiments::{base_summary, Experiment};
use super::report::{num, ExperimentReport, SeedRecord, TrajectoryPoint};

/// Projection rule applied to the metric-preconditioned gradient `G g`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionRule {
    /// `(I - tau tau^T) G g`.
    EuclideanOfGg,
    /// `G g - tau (tau^T G G g) / (tau^T G tau)`, orthogonal in the `G` inner product.
    GOrthogonal,
    /// `Q_perp G g`, which removes the component along `G tau`.
    Oblique,
}

impl ProjectionRule {
    pub const ALL: [ProjectionRule; 3] = [ProjectionRule::EuclideanOfGg, ProjectionRule::GOrthogonal, ProjectionRule::Oblique];

    pub fn name(self) -> &'static str {
        match self {
            ProjectionRule::EuclideanOfGg => "euclidean_gg",
            ProjectionRule::GOrthogonal => "g_orthogonal",
            ProjectionRule::Oblique => "oblique",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown projection rule `{name}`")))
    }

    pub fn direction(self, g_metric: &Matrix, tau: &Vector, grad: &Vector) -> Vector {
        let gg = g_metric * grad;
        let gt = g_metric * tau;
        let tgt = tau.dot(&gt);
        match self {
            ProjectionRule::EuclideanOfGg => &gg - tau * tau.dot(&gg),
            ProjectionRule::GOrthogonal => &gg - tau * (gt.dot(&gg) / tgt),
            ProjectionRule::Oblique => &gg - &gt * (tau.dot(&gg) / tgt),
        }
    }
}

/// Forward-Euler integration of `dx/dt = -rule(G, tau, H x)` for the
/// quadratic `E = x^T H x / 2`. Returns every `stride`-th point, the last
/// point always included.
pub fn projection_flow(
    rule: ProjectionRule,
    g_metric: &Matrix,
    hessian: &Matrix,
    tau: &Vector,
    start: &Vector,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Vec<Vector> {
    let stride = stride.max(1);
    let mut x = start.clone();
    let mut out = vec![x.clone()];
    for n in 1..=steps {
        let d = rule.direction(g_metric, tau, &(hessian * &x));
        x -= d * dt;
        if n % stride == 0 || n == steps {
            out.push(x.clone());
        }
    }
    out
}

/// Distance from `x` to the line spanned by `u`.
pub fn distance_to_line(x: &Vector, u: &Vector) -> f64 {
    let u = u.normalize();
    (x - &u * u.dot(x)).norm()
}

pub const DEMO_STARTS: [[f64; 2]; 3] = [[1.0, 0.6], [-0.8, 0.9], [0.35, -1.0]];
pub const DEMO_DT: f64 = 1e-3;
pub const DEMO_STEPS: usize = 20_000;
const STRIDE: usize = 200;

/// Deterministic flows of the three projection rules on a stretched quadratic.
pub struct ProjectionDemo;

impl ProjectionDemo {
    pub fn hessian() -> Matrix {
        Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 4.0]))
    }

    pub fn tangent() -> Vector {
        let t = 30f64.to_radians();
        Vector::from_vec(vec![t.cos(), t.sin()])
    }
}

impl Experiment for ProjectionDemo {
    fn name(&self) -> &'static str {
        "projdemo"
    }

    fn defaults(&self) -> ExperimentDefaults {
        ExperimentDefaults {
            seeds: 1,
            iterations: DEMO_STEPS,
            variants: &["euclidean_gg", "g_orthogonal", "oblique"],
            noise_multiplier: 0.0,
            neb: NebParams::default(),
        }
    }

    fn run(&self, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
        let rules = cfg.variants.iter().map(|v| ProjectionRule::from_name(v)).collect::<Result<Vec<_>>>()?;
        let h = Self::hessian();
        // the metric equals the Hessian, so the shifted line is far from the classical one
        let g = h.clone();
        let tau = Self::tangent();
        let hinv = h.clone().try_inverse().ok_or(Error::NotPositiveDefinite)?;
        let classical = &hinv * &tau;
        let shifted = &hinv * (&hinv * &tau);

        let mut report = ExperimentReport::new(self.name());
        let mut terminals = Map::new();
        for rule in rules {
            let mut entries = Vec::new();
            for (i, s) in DEMO_STARTS.iter().enumerate() {
                let path = projection_flow(rule, &g, &h, &tau, &Vector::from_row_slice(s), DEMO_DT, cfg.iterations, STRIDE);
                let end = path.last().expect("flow keeps its start");
                let (dc, ds) = (distance_to_line(end, &classical), distance_to_line(end, &shifted));
                let label = format!("{}:start{i}", rule.name());
                for (j, p) in path.iter().enumerate() {
                    let iter = (j * STRIDE).min(cfg.iterations);
                    report.trajectory.push(TrajectoryPoint {
                        variant: label.clone(),
                        iter,
                        mean_value: distance_to_line(p, &classical),
                        sem: 0.0,
                    });
                }
                report.seeds.push(SeedRecord {
                    variant: rule.name().into(),
                    seed: i as u64,
                    final_barrier_error: None,
                    final_residual: Some(dc),
                    success: None,
                });
                entries.push(json!({
                    "start": [num(s[0]), num(s[1])],
                    "terminal": [num(end[0]), num(end[1])],
                    "distance_to_classical_line": num(dc),
                    "distance_to_shifted_line": num(ds),
                }));
            }
            terminals.insert(rule.name().into(), Value::Array(entries));
        }
        base_summary(&mut report, cfg)?;
        report.insert("classical_line_direction", json!([num(classical[0]), num(classical[1])]));
        report.insert("shifted_line_direction", json!([num(shifted[0]), num(shifted[1])]));
        report.insert("terminals", Value::Object(terminals));
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terminal(rule: ProjectionRule, g: &Matrix, s: &[f64; 2]) -> Vector {
        let h = ProjectionDemo::hessian();
        projection_flow(rule, g, &h, &ProjectionDemo::tangent(), &Vector::from_row_slice(s), DEMO_DT, DEMO_STEPS, DEMO_STEPS)
            .pop()
            .unwrap()
    }

    #[test]
    fn oblique_flow_ends_on_the_classical_zero_set() {
        let h = ProjectionDemo::hessian();
        let tau = ProjectionDemo::tangent();
        for s in &DEMO_STARTS {
            let x = terminal(ProjectionRule::Oblique, &h, s);
            let g = &h * &x;
            // g parallel to tau
            assert!((g[0] * tau[1] - g[1] * tau[0]).abs() <= 1e-4 * g.norm().max(1.0), "{x}");
            assert!(x.norm() > 0.1);
        }
    }

    #[test]
    fn euclidean_flow_ends_on_the_shifted_line() {
        let h = ProjectionDemo::hessian();
        let tau = ProjectionDemo::tangent();
        let ginv_tau = h.clone().try_inverse().unwrap() * &tau;
        for s in &DEMO_STARTS {
            let x = terminal(ProjectionRule::EuclideanOfGg, &h, s);
            let g = &h * &x;
            assert!((g[0] * ginv_tau[1] - g[1] * ginv_tau[0]).abs() <= 1e-4, "{x}");
            // and visibly off the classical set
            assert!(distance_to_line(&x, &(h.clone().try_inverse().unwrap() * &tau)) > 1e-2);
        }
    }

    #[test]
    fn identity_metric_makes_the_rules_agree() {
        let g = Matrix::identity(2, 2);
        let h = ProjectionDemo::hessian();
        let tau = ProjectionDemo::tangent();
        let start = Vector::from_row_slice(&DEMO_STARTS[1]);
        let paths: Vec<_> = ProjectionRule::ALL.iter().map(|&r| projection_flow(r, &g, &h, &tau, &start, DEMO_DT, 500, 1)).collect();
        for p in &paths[1..] {
            for (a, b) in p.iter().zip(&paths[0]) {
                assert!((a - b).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn rule_names_round_trip() {
        for r in ProjectionRule::ALL {
            assert_eq!(ProjectionRule::from_name(r.name()).unwrap(), r);
        }
        assert!(ProjectionRule::from_name("x").is_err());
    }
}
