//! Uncertainty-aware dimer.

mod handoff;
mod hvp;
mod params;
mod run;
mod steps;
mod variants;

pub use handoff::{handoff, handoff_ratio, initial_trust_radius, normal_noise_trace, Handoff, TraceMode};
pub use hvp::{hvp_covariance, hvp_estimate, hvp_from_members, HvpEstimate};
pub use params::DimerParams;
pub use run::{run_dimer, DimerOutcome, DimerRunConfig, DimerTrace};
pub use steps::{
    adapt_dimer_length, dimer_residual, dimer_rotate, dimer_translate, hvp_noise_ratio, reflect,
    reflected_gradient_residual, rotation_metric_apply, tangent_part, tangent_trace, DimerState, LengthDecision,
    RotationStep, TranslationStep,
};
pub use variants::{DimerRegistry, DimerVariant, StdDimer, UaDimer};
