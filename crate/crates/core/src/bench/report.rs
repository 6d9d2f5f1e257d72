use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::{Error, Result};

use super::stats::{mean, sem};

/// Final outcome of one variant on one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRecord {
    pub variant: String,
    pub seed: u64,
    pub final_barrier_error: Option<f64>,
    pub final_residual: Option<f64>,
    pub success: Option<bool>,
}

/// Seed-averaged trajectory value of one variant at one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub variant: String,
    pub iter: usize,
    pub mean_value: f64,
    pub sem: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seeds: Vec<SeedRecord>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Aggregates, statistics, decomposition and config echo.
    pub summary: Map<String, Value>,
    /// Wall time in seconds. Kept out of the deterministic files.
    pub wall_time: f64,
}

impl ExperimentReport {
    pub fn new(experiment: &str) -> Self {
        Self { experiment: experiment.to_string(), ..Default::default() }
    }

    /// Append per-iteration mean and SEM over seeds; `rows[s][k]` is seed `s` at iteration `k`.
    pub fn push_trajectory(&mut self, variant: &str, rows: &[Vec<f64>]) {
        let len = rows.iter().map(Vec::len).min().unwrap_or(0);
        for k in 0..len {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            self.trajectory.push(TrajectoryPoint { variant: variant.to_string(), iter: k, mean_value: mean(&col), sem: sem(&col) });
        }
    }

    pub fn insert(&mut self, key: &str, value: Value) {
        self.summary.insert(key.to_string(), value);
    }
}

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Shortest text of `x` rounded to 12 significant digits.
pub fn fmt12(x: f64) -> String {
    let r = round12(x);
    if r.is_nan() {
        "nan".into()
    } else if r.is_infinite() {
        if r > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{r}")
    }
}

/// Round every number in `v` to 12 significant digits; non-finite numbers become null.
pub fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if !n.is_i64() && !n.is_u64() {
                    *v = serde_json::Number::from_f64(round12(f)).map(Value::Number).unwrap_or(Value::Null);
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// A JSON number, or null when not finite.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

pub const SEED_HEADER: &str = "experiment,variant,seed,final_barrier_error,final_residual,success";
pub const TRAJECTORY_HEADER: &str = "variant,iter,mean_value,sem";

pub fn seeds_csv(report: &ExperimentReport) -> String {
    let mut out = format!("{SEED_HEADER}\n");
    let opt = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
    for r in &report.seeds {
        let success = r.success.map(|b| if b { "1" } else { "0" }).unwrap_or("");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            report.experiment,
            r.variant,
            r.seed,
            opt(r.final_barrier_error),
            opt(r.final_residual),
            success
        );
    }
    out
}

pub fn trajectory_csv(report: &ExperimentReport) -> String {
    let mut out = format!("{TRAJECTORY_HEADER}\n");
    for p in &report.trajectory {
        let _ = writeln!(out, "{},{},{},{}", p.variant, p.iter, fmt12(p.mean_value), fmt12(p.sem));
    }
    out
}

pub fn summary_json(report: &ExperimentReport) -> Result<String> {
    let mut v = Value::Object(report.summary.clone());
    round_json(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Files written by [`emit_report`].
#[derive(Clone, Debug)]
pub struct EmittedFiles {
    pub seeds: PathBuf,
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub run_info: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `<experiment>_seeds.csv`, `<experiment>_trajectory.csv`,
/// `<experiment>_summary.json` and `<experiment>_run_info.json` to `dir`.
/// Only the last one holds wall time, so the first three are reproducible
/// byte for byte.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<EmittedFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = &report.experiment;
    let files = EmittedFiles {
        seeds: dir.join(format!("{name}_seeds.csv")),
        trajectory: dir.join(format!("{name}_trajectory.csv")),
        summary: dir.join(format!("{name}_summary.json")),
        run_info: dir.join(format!("{name}_run_info.json")),
    };
    write(&files.seeds, &seeds_csv(report))?;
    write(&files.trajectory, &trajectory_csv(report))?;
    write(&files.summary, &summary_json(report)?)?;
    let info = serde_json::json!({
        "experiment": name,
        "wall_time_seconds": round12(report.wall_time),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write(&files.run_info, &format!("{}\n", serde_json::to_string_pretty(&info).unwrap_or_default()))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentReport {
        let mut r = ExperimentReport::new("neb2d");
        for (i, v) in ["std", "ua"].iter().enumerate() {
            for s in 0..3u64 {
                r.seeds.push(SeedRecord {
                    variant: v.to_string(),
                    seed: s,
                    final_barrier_error: Some(0.1 / (s as f64 + 1.0) + i as f64 * 1e-13),
                    final_residual: Some(std::f64::consts::PI * 1e-7 * s as f64),
                    success: None,
                });
            }
            r.push_trajectory(v, &[vec![1.0, 0.5, 1.0 / 3.0], vec![2.0, 0.25, 0.2]]);
        }
        r.insert("ratio", num(2.0 / 3.0));
        r
    }

    #[test]
    fn empty_report_has_header_only_files() {
        let r = ExperimentReport::new("dimer2d");
        assert_eq!(seeds_csv(&r), format!("{SEED_HEADER}\n"));
        assert_eq!(trajectory_csv(&r), format!("{TRAJECTORY_HEADER}\n"));
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        let text = seeds_csv(&r);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let headers = rd.headers().unwrap().clone();
        assert_eq!(headers.iter().collect::<Vec<_>>().join(","), SEED_HEADER);
        let parsed: Vec<f64> = rd.records().map(|rec| rec.unwrap()[3].parse().unwrap()).collect();
        let expected: Vec<f64> = r.seeds.iter().map(|s| round12(s.final_barrier_error.unwrap())).collect();
        assert_eq!(parsed, expected);

        let text = trajectory_csv(&r);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let parsed: Vec<(f64, f64)> =
            rd.records().map(|rec| rec.unwrap()).map(|rec| (rec[2].parse().unwrap(), rec[3].parse().unwrap())).collect();
        let expected: Vec<(f64, f64)> = r.trajectory.iter().map(|p| (round12(p.mean_value), round12(p.sem))).collect();
        assert_eq!(parsed, expected);
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(2.0), "2");
        assert_eq!(fmt12(-1234567.891234567), "-1234567.89123");
        assert_eq!(fmt12(f64::NAN), "nan");
        let mut v = serde_json::json!({"a": 0.1 + 0.2, "b": [1, 2.000000000000004]});
        round_json(&mut v);
        assert_eq!(v.to_string(), r#"{"a":0.3,"b":[1,2.0]}"#);
    }

    #[test]
    fn emission_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = sample();
        let a = emit_report(&r, dir.path()).unwrap();
        let first = [std::fs::read(&a.seeds).unwrap(), std::fs::read(&a.trajectory).unwrap(), std::fs::read(&a.summary).unwrap()];
        r.wall_time = 123.0;
        let b = emit_report(&r, dir.path()).unwrap();
        let second = [std::fs::read(&b.seeds).unwrap(), std::fs::read(&b.trajectory).unwrap(), std::fs::read(&b.summary).unwrap()];
        assert_eq!(first, second);
    }

    #[test]
    fn unwritable_directory_reports_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = emit_report(&sample(), &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"));
        assert_eq!(err.exit_code(), 2);
    }
}
