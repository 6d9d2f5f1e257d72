//! Benchmark drivers, paired statistics and report emission.

mod config;
mod experiments;
mod projdemo;
mod report;
mod stats;
mod wvac;

pub use config::{ExperimentConfig, ExperimentDefaults, Overrides, SweepSettings, WvacSettings};
pub use experiments::{
    run_experiment, Analytic2d, Dimer2d, Experiment, ExperimentRegistry, Neb2d, Rate2d, Sweep2d, DIMER_DIRECTION,
    DIMER_START, NEB_VARIANTS, RATE_WINDOW,
};
pub use projdemo::{distance_to_line, projection_flow, ProjectionDemo, ProjectionRule, DEMO_DT, DEMO_STARTS, DEMO_STEPS};
pub use report::{
    emit_report, fmt12, num, round12, round_json, seeds_csv, summary_json, trajectory_csv, EmittedFiles,
    ExperimentReport, SeedRecord, TrajectoryPoint, SEED_HEADER, TRAJECTORY_HEADER,
};
pub use stats::*;
pub use wvac::{
    fire_relax, load_setfl, setfl_path, setfl_style, wvac_neb_params, wvac_setup, wvac_setup_from_config, Relaxed,
    WvacExperiment, WvacSetup, SETFL_ENV,
};
