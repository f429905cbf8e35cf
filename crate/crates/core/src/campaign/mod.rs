//! Campaigns: compilation of user specs, the closed loop
//! (plan, execute, analyze, record, stop-check) and lifecycle control.
//!
//! Every change to a [`CampaignState`] is a [`CampaignEvent`] that is
//! journaled before it is applied, so replaying the journal rebuilds the
//! same state.

mod compile;
mod engine;
mod runner;
mod spec;
mod state;
#[cfg(test)]
mod tests;

pub use compile::{catalog_of, compile_campaign, is_campaign_id, CompiledCampaign};
pub use engine::{
    begin_experiment, control, dispatch, evaluate_stop, execute_pipeline, execute_step, external_planner_inputs,
    finish_experiment, plan, resolve_inputs, run_iteration, run_to_completion, stop_campaign, Engine, EngineError,
    InFlight, IterationOutcome, PipelineOutcome, PlanOutcome, PlanRequest, StepOutput,
};
pub use runner::CampaignHandle;
pub use spec::{
    Binding, CampaignSpec, CampaignStatus, ControlAction, ErrorPolicy, ExperimentRecord, ExperimentStatus, Objective,
    PlannerConfig, Provenance, ProviderRef, StepTemplate, StopCriteria, StopDecision, StopReason, MAX_RETRIES,
};
pub use state::{CampaignEvent, CampaignState};
