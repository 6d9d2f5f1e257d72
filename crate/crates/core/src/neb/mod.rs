//! Uncertainty-aware nudged elastic band.

mod band;
mod forces;
mod params;
mod projection;
mod run;
mod variants;

pub use band::{hj_tangent, Band};
pub use forces::{
    al_trigger_eval, band_logdet, band_metrics, cap_steps, check_stop_neb, logdet_penalties, neb_residual, neb_step,
    raw_steps, sample_band, ua_neb_forces, BandForces, BandSamples, StepInfo, StopDecision, TriggerRecord,
};
pub use params::NebParams;
pub use projection::{oblique_project, ObliqueProjector};
pub use run::{optimizer_field, run_neb, NebOutcome, NebRunConfig, NebTrace};
pub use variants::{
    DiagNeb, MetricNeb, MetricSource, NebRegistry, NebVariant, PenaltyNeb, RefreshNeb, StdNeb, UaNeb,
};
