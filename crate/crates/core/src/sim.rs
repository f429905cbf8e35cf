//! Simulated laboratory: a peak-shaped device response, a peak-height
//! analyzer and an epsilon-greedy planner, as in-process modules.

use std::collections::HashMap;

use crate::planner::{epsilon_greedy_next, Direction, Observation, ParameterSpace, Rng64};
use crate::registry::{ModuleId, Registry, RegistryError};
use crate::transport::{Handler, HandlerFailure, LocalModule};
use crate::wire::{from_data, CapabilitySchema, DataValue, ModuleDescriptor, ParamKind, ParameterSpec, Record, Role};

pub const TRACE_LEN: usize = 32;
pub const PEAK_X: f64 = 0.3;
pub const PEAK_Y: f64 = 0.7;

pub const DEVICE_CAPABILITY: &str = "measure";
pub const ANALYZER_CAPABILITY: &str = "score_trace";
pub const PLANNER_CAPABILITY: &str = "propose";

/// Peak amplitude at `(x, y)`: 1 at the optimum, falling off as a Gaussian.
pub fn amplitude(x: f64, y: f64) -> f64 {
    (-((x - PEAK_X).powi(2) + (y - PEAK_Y).powi(2)) / 0.1).exp()
}

/// 32-point trace with a peak at index 16, plus optional Gaussian noise.
pub fn device_trace(x: f64, y: f64, sigma: f64, rng: &mut Rng64) -> Vec<f64> {
    let a = amplitude(x, y);
    (0..TRACE_LEN)
        .map(|i| {
            let d = i as f64 - 16.0;
            let clean = 0.1 + a * (-(d * d) / 18.0).exp();
            if sigma > 0.0 {
                clean + sigma * rng.gaussian()
            } else {
                clean
            }
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Peak height above the baseline: max minus median.
pub fn trace_score(trace: &[f64]) -> Option<f64> {
    let max = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    median(trace).map(|m| max - m)
}

/// Objective of the noiseless lab at `(x, y)`.
pub fn objective(x: f64, y: f64) -> f64 {
    trace_score(&device_trace(x, y, 0.0, &mut Rng64::new(0))).expect("non-empty trace")
}

fn capability(name: &str, role: Role, inputs: Vec<ParameterSpec>, outputs: Vec<ParameterSpec>) -> CapabilitySchema {
    CapabilitySchema { name: name.into(), role, inputs, outputs, default_timeout_ms: 5000 }
}

pub fn device_descriptor() -> ModuleDescriptor {
    ModuleDescriptor {
        module_name: "sim_device".into(),
        version: "1.0.0".into(),
        capabilities: vec![capability(
            DEVICE_CAPABILITY,
            Role::Device,
            vec![
                ParameterSpec::real("x", 0.0, 1.0),
                ParameterSpec::real("y", 0.0, 1.0),
                ParameterSpec { min: Some(0.0), ..ParameterSpec::new("noise_sigma", ParamKind::Real) }
                    .with_default(0.0),
            ],
            vec![ParameterSpec::new("trace", ParamKind::List)],
        )],
        heartbeat_interval_ms: 1000,
    }
}

pub fn analyzer_descriptor() -> ModuleDescriptor {
    ModuleDescriptor {
        module_name: "sim_analyzer".into(),
        version: "1.0.0".into(),
        capabilities: vec![capability(
            ANALYZER_CAPABILITY,
            Role::Analyzer,
            vec![ParameterSpec::new("trace", ParamKind::List)],
            vec![ParameterSpec::new("score", ParamKind::Real)],
        )],
        heartbeat_interval_ms: 1000,
    }
}

pub fn planner_descriptor() -> ModuleDescriptor {
    ModuleDescriptor {
        module_name: "sim_planner".into(),
        version: "1.0.0".into(),
        capabilities: vec![capability(PLANNER_CAPABILITY, Role::Planner, vec![], vec![])],
        heartbeat_interval_ms: 1000,
    }
}

fn real(inputs: &Record, name: &str) -> Result<f64, HandlerFailure> {
    inputs
        .get(name)
        .and_then(DataValue::as_f64)
        .ok_or_else(|| HandlerFailure::new("bad_input", format!("{name} missing")))
}

/// Device handlers; noise draws come from a generator seeded with `noise_seed`.
pub fn device_handlers(noise_seed: u64) -> HashMap<String, Handler> {
    let mut rng = Rng64::new(noise_seed);
    let mut h: HashMap<String, Handler> = HashMap::new();
    h.insert(
        DEVICE_CAPABILITY.into(),
        Box::new(move |inputs: &Record| {
            let (x, y) = (real(inputs, "x")?, real(inputs, "y")?);
            let sigma = inputs.get("noise_sigma").and_then(DataValue::as_f64).unwrap_or(0.0);
            let trace = device_trace(x, y, sigma, &mut rng);
            Ok(Record::from([("trace".to_owned(), DataValue::List(trace.into_iter().map(DataValue::Real).collect()))]))
        }),
    );
    h
}

pub fn analyzer_handlers() -> HashMap<String, Handler> {
    let mut h: HashMap<String, Handler> = HashMap::new();
    h.insert(
        ANALYZER_CAPABILITY.into(),
        Box::new(|inputs: &Record| {
            let trace: Vec<f64> = inputs
                .get("trace")
                .and_then(DataValue::as_list)
                .map(|l| l.iter().filter_map(DataValue::as_f64).collect())
                .unwrap_or_default();
            let score = trace_score(&trace).ok_or_else(|| HandlerFailure::new("EmptyTrace", "trace is empty"))?;
            Ok(Record::from([("score".to_owned(), DataValue::Real(score))]))
        }),
    );
    h
}

/// Stateless epsilon-greedy planner over the wire: a fresh generator seeded
/// from the request, the given history, the same rules as the built-in one.
pub fn planner_propose(inputs: &Record) -> Result<Record, HandlerFailure> {
    let malformed = |what: &str| HandlerFailure::new("MalformedHistory", what.to_owned());
    let space: ParameterSpace = from_data(inputs.get("space").ok_or_else(|| malformed("space missing"))?)
        .map_err(|e| malformed(&e.to_string()))?;
    let seed = inputs.get("seed").and_then(DataValue::as_i64).unwrap_or(0) as u64;
    let epsilon = inputs.get("epsilon").and_then(DataValue::as_f64).unwrap_or(0.2);
    let direction: Direction = inputs.get("direction").map(from_data).transpose().ok().flatten().unwrap_or_default();
    let history = inputs
        .get("history")
        .and_then(DataValue::as_list)
        .unwrap_or_default()
        .iter()
        .map(|h| {
            let params = h.as_record().and_then(|r| r.get("params")).and_then(DataValue::as_record).cloned();
            let objective = h.as_record().and_then(|r| r.get("objective")).and_then(DataValue::as_f64);
            params.map(|params| Observation { params, objective }).ok_or_else(|| malformed("history entry"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = Rng64::new(seed);
    let p = epsilon_greedy_next(&mut rng, &space, &history, direction, epsilon)
        .map_err(|e| HandlerFailure::new("planner_error", e.to_string()))?;
    Ok(Record::from([("params".to_owned(), DataValue::Record(p.params))]))
}

pub fn planner_handlers() -> HashMap<String, Handler> {
    let mut h: HashMap<String, Handler> = HashMap::new();
    h.insert(PLANNER_CAPABILITY.into(), Box::new(planner_propose));
    h
}

/// Module ids of a registered simulated lab.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimLab {
    pub device: ModuleId,
    pub analyzer: ModuleId,
    pub planner: ModuleId,
}

/// Registers device, analyzer and planner as in-process modules.
pub fn register_sim_lab(registry: &Registry, noise_seed: u64) -> Result<SimLab, RegistryError> {
    let device = registry.register(device_descriptor(), LocalModule::new(device_handlers(noise_seed)))?;
    let analyzer = registry.register(analyzer_descriptor(), LocalModule::new(analyzer_handlers()))?;
    let planner = registry.register(planner_descriptor(), LocalModule::new(planner_handlers()))?;
    Ok(SimLab { device, analyzer, planner })
}

/// A two-step campaign over the simulated lab: measure at the planned
/// `(x, y)`, then score the trace; maximize the score.
pub fn lab_campaign(
    name: &str,
    grid_steps: u64,
    planner: crate::campaign::PlannerConfig,
    stop: crate::campaign::StopCriteria,
) -> crate::campaign::CampaignSpec {
    use crate::campaign::{Binding, CampaignSpec, ErrorPolicy, Objective, StepTemplate};
    CampaignSpec {
        campaign_id: None,
        name: name.into(),
        space: ParameterSpace::new(vec![
            ParameterSpec::real("x", 0.0, 1.0).with_grid(grid_steps),
            ParameterSpec::real("y", 0.0, 1.0).with_grid(grid_steps),
        ]),
        steps: vec![
            StepTemplate {
                name: "measure".into(),
                capability: DEVICE_CAPABILITY.into(),
                role: Role::Device,
                inputs: [
                    ("x".to_owned(), Binding::FromPlan("x".into())),
                    ("y".to_owned(), Binding::FromPlan("y".into())),
                ]
                .into(),
            },
            StepTemplate {
                name: "analyze".into(),
                capability: ANALYZER_CAPABILITY.into(),
                role: Role::Analyzer,
                inputs: [("trace".to_owned(), Binding::FromStep { step: "measure".into(), field: "trace".into() })]
                    .into(),
            },
        ],
        planner,
        objective: Objective { step: "analyze".into(), field: "score".into(), direction: Direction::Maximize },
        stop,
        error_policy: ErrorPolicy::Abort,
    }
}
