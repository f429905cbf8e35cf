use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::spec::{
    Binding, CampaignSpec, CampaignStatus, ControlAction, ErrorPolicy, ExperimentRecord, ExperimentStatus,
    PlannerConfig, Provenance, ProviderRef, StepTemplate, StopDecision, StopReason,
};
use super::state::{CampaignEvent, CampaignState};
use crate::clock::Clock;
use crate::journal::{Journal, JournalError};
use crate::planner::{Observation, PlannerState};
use crate::registry::{ExecError, Provider, Registry, RegistryError};
use crate::wire::{coerce_record, to_data, DataValue, Record, Role};

/// Everything an iteration talks to.
#[derive(Clone)]
pub struct Engine {
    pub registry: Arc<Registry>,
    pub journal: Arc<Journal>,
    /// Source of experiment and campaign timestamps.
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("cannot {action:?} a {from} campaign")]
    InvalidTransition { from: CampaignStatus, action: ControlAction },
    #[error("campaign is {0}, not RUNNING")]
    NotRunning(CampaignStatus),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

/// Fixed precedence: budget, target, wall clock, planner exhaustion.
pub fn evaluate_stop(state: &CampaignState, now: u64) -> StopDecision {
    match state.status {
        CampaignStatus::Aborted => return StopDecision::Stop(StopReason::Aborted),
        CampaignStatus::Failed => return StopDecision::Stop(StopReason::FatalError),
        _ => {}
    }
    let stop = &state.spec.stop;
    if stop.max_experiments.is_some_and(|max| state.finished_count() >= max) {
        return StopDecision::Stop(StopReason::BudgetExhausted);
    }
    if let (Some(target), Some(best)) = (stop.target_value, state.best().and_then(|b| b.done_objective())) {
        if state.spec.objective.direction.reaches(best, target) {
            return StopDecision::Stop(StopReason::TargetReached);
        }
    }
    if let (Some(limit), Some(start)) = (stop.max_wall_ms, state.started_at) {
        if now.saturating_sub(start) > limit {
            return StopDecision::Stop(StopReason::WallClockExceeded);
        }
    }
    let exhausted = match state.spec.planner.builtin() {
        Some(p) => p.is_exhausted(&state.planner_state, &state.spec.space),
        None => state.planner_exhausted,
    };
    if exhausted {
        return StopDecision::Stop(StopReason::PlannerExhausted);
    }
    StopDecision::Continue
}

/// Shared between the executor of an experiment and whoever might abort it.
#[derive(Debug)]
pub struct InFlight {
    pub index: u64,
    dispatched: AtomicBool,
    abort: AtomicBool,
}

impl InFlight {
    pub fn new(index: u64) -> Arc<Self> {
        Arc::new(Self { index, dispatched: AtomicBool::new(false), abort: AtomicBool::new(false) })
    }

    pub fn dispatched(&self) -> bool {
        self.dispatched.load(Ordering::SeqCst)
    }

    pub fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }
}

fn status_event(state: &CampaignState, status: CampaignStatus, reason: Option<StopReason>, at: u64) -> CampaignEvent {
    CampaignEvent::StatusChanged { campaign_id: state.campaign_id.clone(), status, reason, at }
}

/// Moves the campaign to `reason`'s final status.
pub fn stop_campaign(state: &mut CampaignState, reason: StopReason, engine: &Engine) -> Result<(), EngineError> {
    let ev = status_event(state, reason.final_status(), Some(reason), engine.clock.now_ms());
    ev.commit(&engine.journal, state)?;
    Ok(())
}

/// Applies a lifecycle action. Pause stops new experiments from starting;
/// one already in flight still completes and is recorded. Abort ends the
/// in-flight experiment as FAILED, or SKIPPED if nothing was dispatched yet.
pub fn control(
    state: &mut CampaignState,
    action: ControlAction,
    engine: &Engine,
    inflight: Option<&InFlight>,
) -> Result<(), EngineError> {
    use CampaignStatus::*;
    let now = engine.clock.now_ms();
    let (next, reason) = match (state.status, action) {
        (Draft, ControlAction::Start) => (Running, None),
        (Running, ControlAction::Pause) => (Paused, None),
        (Paused, ControlAction::Resume) => (Running, None),
        (Running | Paused, ControlAction::Abort) => (Aborted, Some(StopReason::Aborted)),
        (from, action) => return Err(EngineError::InvalidTransition { from, action }),
    };
    if action == ControlAction::Abort {
        if let Some(f) = inflight {
            f.abort.store(true, Ordering::SeqCst);
        }
        if let Some(rec) = state.in_flight() {
            let mut rec = rec.clone();
            let dispatched = inflight.filter(|f| f.index == rec.index).map_or(true, |f| f.dispatched());
            rec.status = if dispatched { ExperimentStatus::Failed } else { ExperimentStatus::Skipped };
            rec.error = Some("aborted".into());
            rec.ended = Some(now);
            let best_index = state.best_index;
            CampaignEvent::ExperimentUpdated { campaign_id: state.campaign_id.clone(), record: rec, best_index }
                .commit(&engine.journal, state)?;
        }
    }
    status_event(state, next, reason, now).commit(&engine.journal, state)?;
    Ok(())
}

/// What a planner needs, detached from the campaign lock.
#[derive(Debug, Clone)]
pub struct PlanRequest {
    pub spec: CampaignSpec,
    pub planner_state: PlannerState,
    pub history: Vec<Observation>,
}

impl PlanRequest {
    pub fn of(state: &CampaignState) -> Self {
        Self { spec: state.spec.clone(), planner_state: state.planner_state, history: state.observations() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Proposal { params: Record, planner_state: PlannerState, degenerate: bool },
    Exhausted,
    Failed(String),
}

fn max_attempts(policy: ErrorPolicy) -> u32 {
    match policy {
        ErrorPolicy::Retry { n } => n + 1,
        _ => 1,
    }
}

/// Inputs sent to an external planner capability.
pub fn external_planner_inputs(req: &PlanRequest, seed: u64, epsilon: f64) -> Record {
    let history = req
        .history
        .iter()
        .map(|o| {
            DataValue::record([
                ("params", DataValue::Record(o.params.clone())),
                ("objective", o.objective.map_or(DataValue::Null, DataValue::Real)),
            ])
        })
        .collect();
    let mut r = Record::new();
    r.insert("space".into(), to_data(&req.spec.space).unwrap_or_default());
    r.insert("history".into(), DataValue::List(history));
    r.insert("seed".into(), DataValue::Int((seed >> 1) as i64));
    r.insert("epsilon".into(), DataValue::Real(epsilon));
    r.insert("direction".into(), to_data(&req.spec.objective.direction).unwrap_or_default());
    r
}

/// Obtains the next parameters from the campaign's planner.
pub fn plan(req: &PlanRequest, registry: &Registry) -> PlanOutcome {
    let mut planner_state = req.planner_state;
    match &req.spec.planner {
        PlannerConfig::External { capability, epsilon, .. } => {
            let seed = planner_state.rng.next_u64();
            let inputs = external_planner_inputs(req, seed, *epsilon);
            let mut last = String::new();
            for _ in 0..max_attempts(req.spec.error_policy) {
                let out = match execute_step(registry, capability, Role::Planner, &inputs) {
                    Ok(out) => out.outputs,
                    Err(e) => {
                        last = format!("planner {capability}: {}: {e}", e.code());
                        continue;
                    }
                };
                if out.get("exhausted").and_then(DataValue::as_bool) == Some(true) {
                    return PlanOutcome::Exhausted;
                }
                let Some(params) = out.get("params").and_then(DataValue::as_record) else {
                    last = format!("planner {capability}: result has no params record");
                    continue;
                };
                match coerce_record(params, &req.spec.space.dimensions, false) {
                    Ok(params) => return PlanOutcome::Proposal { params, planner_state, degenerate: false },
                    Err(e) => last = format!("planner {capability}: {}: {e}", e.code()),
                }
            }
            PlanOutcome::Failed(last)
        }
        other => {
            let planner = other.builtin().expect("builtin planner");
            match planner.propose(&mut planner_state, &req.spec.space, &req.history, req.spec.objective.direction) {
                Ok(Some(p)) => PlanOutcome::Proposal { params: p.params, planner_state, degenerate: p.degenerate },
                Ok(None) => PlanOutcome::Exhausted,
                Err(e) => PlanOutcome::Failed(e.to_string()),
            }
        }
    }
}

/// Appends the RUNNING record for a fresh proposal.
pub fn begin_experiment(
    state: &mut CampaignState,
    params: Record,
    planner_state: PlannerState,
    engine: &Engine,
) -> Result<u64, EngineError> {
    if state.status != CampaignStatus::Running {
        return Err(EngineError::NotRunning(state.status));
    }
    let index = state.experiments.len() as u64;
    let record = ExperimentRecord {
        campaign_id: state.campaign_id.clone(),
        index,
        params,
        step_results: BTreeMap::new(),
        objective_value: None,
        status: ExperimentStatus::Running,
        attempts: 0,
        started: engine.clock.now_ms(),
        ended: None,
        provenance: Provenance { planner: state.spec.planner.name(), providers: Vec::new() },
        error: None,
    };
    CampaignEvent::ExperimentAppended { campaign_id: state.campaign_id.clone(), record, planner_state }
        .commit(&engine.journal, state)?;
    Ok(index)
}

/// Result of one capability call, with who served it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepOutput {
    pub outputs: Record,
    pub module_id: crate::registry::ModuleId,
    pub module_name: String,
    pub version: String,
    pub elapsed_ms: u64,
}

/// Sends one request to a chosen provider. Planner-role capabilities take
/// structured inputs and are exempt from scalar validation.
pub fn dispatch(provider: &Provider, inputs: &Record) -> Result<StepOutput, ExecError> {
    let schema = &provider.schema;
    let scalar = schema.role != Role::Planner;
    let inputs = if scalar { coerce_record(inputs, &schema.inputs, false)? } else { inputs.clone() };
    let timeout = Duration::from_millis(schema.default_timeout_ms);
    let out = provider.link.execute(&schema.name, inputs, timeout)?;
    let outputs = if scalar {
        coerce_record(&out.outputs, &schema.outputs, true).map_err(|e| ExecError::SchemaViolation(e.to_string()))?
    } else {
        out.outputs
    };
    Ok(StepOutput {
        outputs,
        module_id: provider.module_id,
        module_name: provider.module_name.clone(),
        version: provider.version.clone(),
        elapsed_ms: out.elapsed_ms,
    })
}

/// Resolves the provider for `(capability, role)` and dispatches to it.
pub fn execute_step(
    registry: &Registry,
    capability: &str,
    role: Role,
    inputs: &Record,
) -> Result<StepOutput, ExecError> {
    let provider = registry.resolve_capability(capability, role).map_err(|e| match e {
        RegistryError::NoProvider { .. } => ExecError::NoProvider,
        other => ExecError::ModuleError { code: "registry".into(), detail: other.to_string() },
    })?;
    dispatch(&provider, inputs)
}

/// Builds a step's input record from its bindings.
pub fn resolve_inputs(
    step: &StepTemplate,
    params: &Record,
    results: &BTreeMap<String, Record>,
) -> Result<Record, String> {
    let mut inputs = Record::new();
    for (name, binding) in &step.inputs {
        let value = match binding {
            Binding::Literal(v) => v.clone(),
            Binding::FromPlan(dim) => params.get(dim).cloned().ok_or_else(|| format!("no planned value for {dim}"))?,
            Binding::FromStep { step: source, field } => results
                .get(source)
                .and_then(|r| r.get(field))
                .cloned()
                .ok_or_else(|| format!("step {source} produced no field {field}"))?,
        };
        inputs.insert(name.clone(), value);
    }
    Ok(inputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub step_results: BTreeMap<String, Record>,
    pub providers: Vec<ProviderRef>,
    pub attempts: u32,
    pub objective: Result<f64, String>,
}

/// Runs every step in order, applying the retry policy per step.
pub fn execute_pipeline(
    spec: &CampaignSpec,
    params: &Record,
    registry: &Registry,
    inflight: Option<&InFlight>,
) -> PipelineOutcome {
    let mut out = PipelineOutcome {
        step_results: BTreeMap::new(),
        providers: Vec::new(),
        attempts: 0,
        objective: Err(String::new()),
    };
    let aborted = || inflight.is_some_and(InFlight::aborted);
    for step in &spec.steps {
        let inputs = match resolve_inputs(step, params, &out.step_results) {
            Ok(i) => i,
            Err(e) => {
                out.objective = Err(format!("step {}: {e}", step.name));
                return out;
            }
        };
        let mut result = Err(String::new());
        for _ in 0..max_attempts(spec.error_policy) {
            if aborted() {
                out.objective = Err("aborted".into());
                return out;
            }
            if let Some(f) = inflight {
                f.dispatched.store(true, Ordering::SeqCst);
            }
            out.attempts += 1;
            match execute_step(registry, &step.capability, step.role, &inputs) {
                Ok(o) => {
                    result = Ok(o);
                    break;
                }
                Err(e) => result = Err(format!("step {}: {}: {e}", step.name, e.code())),
            }
        }
        match result {
            Ok(o) => {
                out.providers.push(ProviderRef {
                    step: step.name.clone(),
                    module_id: o.module_id,
                    module_name: o.module_name,
                    version: o.version,
                });
                out.step_results.insert(step.name.clone(), o.outputs);
            }
            Err(e) => {
                out.objective = Err(e);
                return out;
            }
        }
    }
    let obj = &spec.objective;
    out.objective = match out.step_results.get(&obj.step).and_then(|r| r.get(&obj.field)).and_then(DataValue::as_f64) {
        Some(v) if v.is_finite() => Ok(v),
        Some(_) => Err(format!("objective {}.{} is not finite", obj.step, obj.field)),
        None => Err(format!("objective {}.{} missing from results", obj.step, obj.field)),
    };
    out
}

/// Records the outcome of experiment `index`. Returns the stop reason when
/// the failure policy ends the campaign.
pub fn finish_experiment(
    state: &mut CampaignState,
    index: u64,
    outcome: PipelineOutcome,
    engine: &Engine,
) -> Result<Option<StopReason>, EngineError> {
    let Some(current) = state.experiments.get(index as usize) else { return Ok(None) };
    if current.status != ExperimentStatus::Running {
        return Ok(None);
    }
    let mut rec = current.clone();
    rec.step_results = outcome.step_results;
    rec.attempts = outcome.attempts;
    rec.ended = Some(engine.clock.now_ms());
    rec.provenance.providers = outcome.providers;
    let failed = match outcome.objective {
        Ok(v) => {
            rec.status = ExperimentStatus::Done;
            rec.objective_value = Some(v);
            false
        }
        Err(e) => {
            rec.status = ExperimentStatus::Failed;
            rec.error = Some(e);
            true
        }
    };
    let mut objectives: Vec<Option<f64>> = state.experiments.iter().map(|e| e.done_objective()).collect();
    objectives[index as usize] = rec.done_objective();
    let best_index = crate::planner::best_so_far(objectives, state.spec.objective.direction).map(|i| i as u64);
    CampaignEvent::ExperimentUpdated { campaign_id: state.campaign_id.clone(), record: rec, best_index }
        .commit(&engine.journal, state)?;
    if failed && state.spec.error_policy == ErrorPolicy::Abort && !state.status.is_terminal() {
        stop_campaign(state, StopReason::FatalError, engine)?;
        return Ok(Some(StopReason::FatalError));
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationOutcome {
    /// Index of the recorded experiment, if one was started.
    pub index: Option<u64>,
    pub status: Option<ExperimentStatus>,
    pub stop: Option<StopReason>,
}

/// One full loop turn on a campaign owned by the caller.
pub fn run_iteration(state: &mut CampaignState, engine: &Engine) -> Result<IterationOutcome, EngineError> {
    if state.status != CampaignStatus::Running {
        return Err(EngineError::NotRunning(state.status));
    }
    let (params, planner_state) = match plan(&PlanRequest::of(state), &engine.registry) {
        PlanOutcome::Proposal { params, planner_state, .. } => (params, planner_state),
        PlanOutcome::Exhausted => {
            stop_campaign(state, StopReason::PlannerExhausted, engine)?;
            return Ok(IterationOutcome { index: None, status: None, stop: Some(StopReason::PlannerExhausted) });
        }
        PlanOutcome::Failed(e) => {
            log::warn!("{}: planner failed: {e}", state.campaign_id);
            stop_campaign(state, StopReason::FatalError, engine)?;
            return Ok(IterationOutcome { index: None, status: None, stop: Some(StopReason::FatalError) });
        }
    };
    let index = begin_experiment(state, params.clone(), planner_state, engine)?;
    let outcome = execute_pipeline(&state.spec, &params, &engine.registry, None);
    let stop = finish_experiment(state, index, outcome, engine)?;
    Ok(IterationOutcome { index: Some(index), status: Some(state.experiments[index as usize].status), stop })
}

/// Drives a RUNNING campaign on the calling thread until it stops.
pub fn run_to_completion(state: &mut CampaignState, engine: &Engine) -> Result<StopReason, EngineError> {
    loop {
        if state.status != CampaignStatus::Running {
            return Err(EngineError::NotRunning(state.status));
        }
        if let StopDecision::Stop(reason) = evaluate_stop(state, engine.clock.now_ms()) {
            stop_campaign(state, reason, engine)?;
            return Ok(reason);
        }
        if let Some(reason) = run_iteration(state, engine)?.stop {
            return Ok(reason);
        }
    }
}
