use std::collections::{BTreeSet, HashMap};

use super::spec::{Binding, CampaignSpec, ErrorPolicy, PlannerConfig, MAX_RETRIES};
use crate::planner::SpaceError;
use crate::registry::CatalogEntry;
use crate::wire::{is_identifier, validate_parameter, CapabilitySchema, ParamKind, Role, Violation, ViolationCode};

/// A campaign that passed every static check.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledCampaign {
    pub spec: CampaignSpec,
    /// Grid size, for campaigns whose space is fully discretized.
    pub grid_size: Option<u64>,
    pub warnings: Vec<String>,
}

/// `c-7`, `ramp_study`, `run-2024-01`: ASCII letters, digits, `-` and `_`.
pub fn is_campaign_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

struct Catalog<'a> {
    by_key: HashMap<(&'a str, Role), (&'a CapabilitySchema, bool)>,
}

impl<'a> Catalog<'a> {
    fn new(entries: &'a [CatalogEntry]) -> Self {
        let mut by_key: HashMap<(&str, Role), (&CapabilitySchema, bool)> = HashMap::new();
        for e in entries {
            let key = (e.schema.name.as_str(), e.schema.role);
            // Prefer the schema of a live provider, else the lowest id.
            match by_key.get(&key) {
                Some((_, true)) => {}
                Some((_, false)) if !e.live => {}
                _ => {
                    by_key.insert(key, (&e.schema, e.live));
                }
            }
        }
        Self { by_key }
    }

    fn get(&self, capability: &str, role: Role) -> Option<(&'a CapabilitySchema, bool)> {
        self.by_key.get(&(capability, role)).copied()
    }
}

fn check_space(spec: &CampaignSpec, builtin: bool, out: &mut Vec<Violation>) -> Option<u64> {
    let mut seen = BTreeSet::new();
    let mut griddable = true;
    for (i, dim) in spec.space.dimensions.iter().enumerate() {
        let path = format!("space.dimensions[{i}]");
        validate_parameter(dim, &path, out);
        if !seen.insert(dim.name.as_str()) {
            out.push(Violation::new(ViolationCode::DuplicateDimension, format!("{path}.name")));
        }
        match dim.kind {
            ParamKind::Real | ParamKind::Integer => {
                if dim.min.is_none() || dim.max.is_none() {
                    out.push(Violation::new(ViolationCode::MissingBounds, format!("{path}.min")));
                    griddable = false;
                }
                if dim.grid_steps.is_none() {
                    griddable = false;
                    if builtin {
                        out.push(Violation::new(ViolationCode::MissingGridSteps, format!("{path}.grid_steps")));
                    }
                }
            }
            ParamKind::Boolean | ParamKind::Enum => {}
            ParamKind::Text | ParamKind::List => {
                griddable = false;
                if builtin {
                    out.push(Violation::new(ViolationCode::UngriddableDimension, format!("{path}.kind")));
                }
            }
        }
    }
    if !griddable {
        return None;
    }
    match spec.space.grid_size() {
        Ok(n) => Some(n),
        Err(SpaceError::TooLarge(_)) => {
            out.push(Violation::new(ViolationCode::GridTooLarge, "space.dimensions"));
            None
        }
        Err(_) => None,
    }
}

fn check_steps(spec: &CampaignSpec, catalog: &Catalog, out: &mut Vec<Violation>, warnings: &mut Vec<String>) {
    if spec.steps.is_empty() {
        out.push(Violation::new(ViolationCode::NoSteps, "steps"));
    }
    let dims: BTreeSet<&str> = spec.space.dimensions.iter().map(|d| d.name.as_str()).collect();
    let mut index_of: HashMap<&str, usize> = HashMap::new();
    for (i, step) in spec.steps.iter().enumerate() {
        let path = format!("steps[{i}]");
        if !is_identifier(&step.name) {
            out.push(Violation::new(ViolationCode::InvalidName, format!("{path}.name")));
        }
        if index_of.contains_key(step.name.as_str()) {
            out.push(Violation::new(ViolationCode::DuplicateStepName, format!("{path}.name")));
        } else {
            index_of.insert(&step.name, i);
        }
    }
    for (i, step) in spec.steps.iter().enumerate() {
        let path = format!("steps[{i}]");
        let schema = match catalog.get(&step.capability, step.role) {
            Some((schema, live)) => {
                if !live {
                    warnings.push(format!(
                        "no live provider for {} capability {:?} (step {})",
                        step.role, step.capability, step.name
                    ));
                }
                Some(schema)
            }
            None => {
                warnings.push(format!(
                    "no registered provider for {} capability {:?} (step {})",
                    step.role, step.capability, step.name
                ));
                None
            }
        };
        for (param, binding) in &step.inputs {
            let bpath = format!("{path}.inputs.{param}");
            if let Some(schema) = schema {
                if step.role != Role::Planner && !schema.inputs.iter().any(|s| &s.name == param) {
                    out.push(Violation::new(ViolationCode::UnknownInput, bpath.clone()));
                }
            }
            match binding {
                Binding::Literal(_) => {}
                Binding::FromPlan(dim) => {
                    if !dims.contains(dim.as_str()) {
                        out.push(Violation::new(ViolationCode::UnknownDimension, bpath));
                    }
                }
                Binding::FromStep { step: source, field } => match index_of.get(source.as_str()) {
                    None => out.push(Violation::new(ViolationCode::UnknownStep, bpath)),
                    Some(&j) if j >= i => out.push(Violation::new(ViolationCode::ForwardStepReference, bpath)),
                    Some(&j) => {
                        let src = &spec.steps[j];
                        if let Some((src_schema, _)) = catalog.get(&src.capability, src.role) {
                            if src.role != Role::Planner && !src_schema.outputs.iter().any(|o| &o.name == field) {
                                out.push(Violation::new(ViolationCode::UnknownOutputField, bpath));
                            }
                        }
                    }
                },
            }
        }
        if let Some(schema) = schema {
            if step.role != Role::Planner {
                for input in &schema.inputs {
                    if input.default.is_none() && !step.inputs.contains_key(&input.name) {
                        out.push(Violation::new(ViolationCode::MissingInput, format!("{path}.inputs.{}", input.name)));
                    }
                }
            }
        }
    }
}

fn check_objective(spec: &CampaignSpec, catalog: &Catalog, out: &mut Vec<Violation>) {
    let Some(step) = spec.steps.iter().find(|s| s.name == spec.objective.step) else {
        out.push(Violation::new(ViolationCode::UnknownObjectiveField, "objective.step"));
        return;
    };
    if let Some((schema, _)) = catalog.get(&step.capability, step.role) {
        match schema.outputs.iter().find(|o| o.name == spec.objective.field) {
            Some(o) if o.kind.is_numeric() => {}
            Some(_) => out.push(Violation::new(ViolationCode::UnknownObjectiveField, "objective.field")),
            None if step.role == Role::Planner => {}
            None => out.push(Violation::new(ViolationCode::UnknownObjectiveField, "objective.field")),
        }
    }
}

fn check_planner(spec: &CampaignSpec, catalog: &Catalog, out: &mut Vec<Violation>, warnings: &mut Vec<String>) {
    let seed_ok = |seed: u64| seed <= i64::MAX as u64;
    let epsilon_ok = |e: f64| (0.0..=1.0).contains(&e);
    match &spec.planner {
        PlannerConfig::Grid => {}
        PlannerConfig::Random { seed } => {
            if !seed_ok(*seed) {
                out.push(Violation::new(ViolationCode::InvalidSeed, "planner.seed"));
            }
        }
        PlannerConfig::EpsilonGreedy { seed, epsilon } | PlannerConfig::External { seed, epsilon, .. } => {
            if !seed_ok(*seed) {
                out.push(Violation::new(ViolationCode::InvalidSeed, "planner.seed"));
            }
            if !epsilon_ok(*epsilon) {
                out.push(Violation::new(ViolationCode::InvalidEpsilon, "planner.epsilon"));
            }
        }
    }
    if let PlannerConfig::External { capability, .. } = &spec.planner {
        match catalog.get(capability, Role::Planner) {
            Some((_, true)) => {}
            _ => warnings.push(format!("no live provider for planner capability {capability:?}")),
        }
    }
}

/// Checks `spec` against itself and the capabilities currently known to the
/// registry. Missing providers only produce warnings.
pub fn compile_campaign(spec: &CampaignSpec, catalog: &[CatalogEntry]) -> Result<CompiledCampaign, Vec<Violation>> {
    let catalog = Catalog::new(catalog);
    let mut out = Vec::new();
    let mut warnings = Vec::new();

    if let Some(id) = &spec.campaign_id {
        if !is_campaign_id(id) {
            out.push(Violation::new(ViolationCode::InvalidCampaignId, "campaign_id"));
        }
    }
    if spec.name.trim().is_empty() {
        out.push(Violation::new(ViolationCode::EmptyName, "name"));
    }
    let builtin = spec.planner.builtin().is_some();
    let grid_size = check_space(spec, builtin, &mut out);
    check_steps(spec, &catalog, &mut out, &mut warnings);
    check_objective(spec, &catalog, &mut out);
    check_planner(spec, &catalog, &mut out, &mut warnings);

    let stop = &spec.stop;
    if stop.max_experiments.is_none() && stop.target_value.is_none() && stop.max_wall_ms.is_none() {
        out.push(Violation::new(ViolationCode::NoStopCriterion, "stop"));
    }
    if stop.max_experiments == Some(0) {
        out.push(Violation::new(ViolationCode::InvalidMaxExperiments, "stop.max_experiments"));
    }
    if stop.target_value.is_some_and(|t| !t.is_finite()) {
        out.push(Violation::new(ViolationCode::Malformed, "stop.target_value"));
    }
    if let ErrorPolicy::Retry { n } = spec.error_policy {
        if n > MAX_RETRIES {
            out.push(Violation::new(ViolationCode::InvalidRetryCount, "error_policy.n"));
        }
    }

    if out.is_empty() {
        Ok(CompiledCampaign { spec: spec.clone(), grid_size, warnings })
    } else {
        Err(out)
    }
}

/// Catalog entries for the capabilities of one descriptor, all live.
pub fn catalog_of(module_id: crate::registry::ModuleId, caps: &[CapabilitySchema]) -> Vec<CatalogEntry> {
    caps.iter().map(|c| CatalogEntry { module_id, live: true, schema: c.clone() }).collect()
}
