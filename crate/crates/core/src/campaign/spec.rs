use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::planner::{BuiltinPlanner, Direction, ParameterSpace, PlannerState};
use crate::registry::ModuleId;
use crate::wire::{DataValue, Record, Role};

/// Where a step input comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Literal(DataValue),
    FromPlan(String),
    FromStep { step: String, field: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTemplate {
    pub name: String,
    pub capability: String,
    pub role: Role,
    #[serde(default)]
    pub inputs: BTreeMap<String, Binding>,
}

fn default_epsilon() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlannerConfig {
    Grid,
    Random {
        seed: u64,
    },
    EpsilonGreedy {
        seed: u64,
        epsilon: f64,
    },
    /// A planner module reached through the registry.
    External {
        capability: String,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

impl PlannerConfig {
    pub fn builtin(&self) -> Option<BuiltinPlanner> {
        match *self {
            PlannerConfig::Grid => Some(BuiltinPlanner::Grid),
            PlannerConfig::Random { seed } => Some(BuiltinPlanner::Random { seed }),
            PlannerConfig::EpsilonGreedy { seed, epsilon } => Some(BuiltinPlanner::EpsilonGreedy { seed, epsilon }),
            PlannerConfig::External { .. } => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            PlannerConfig::External { capability, .. } => format!("external:{capability}"),
            other => other.builtin().map(|b| b.name().to_owned()).unwrap_or_default(),
        }
    }

    pub fn initial_state(&self) -> PlannerState {
        match self {
            PlannerConfig::External { seed, .. } => BuiltinPlanner::Random { seed: *seed }.initial_state(),
            other => other.builtin().expect("builtin").initial_state(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub step: String,
    pub field: String,
    #[serde(default)]
    pub direction: Direction,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_experiments: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wall_ms: Option<u64>,
}

pub const MAX_RETRIES: u32 = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ErrorPolicy {
    #[default]
    Abort,
    Skip,
    Retry {
        n: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign_id: Option<String>,
    pub name: String,
    pub space: ParameterSpace,
    pub steps: Vec<StepTemplate>,
    pub planner: PlannerConfig,
    pub objective: Objective,
    pub stop: StopCriteria,
    #[serde(default)]
    pub error_policy: ErrorPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ExperimentStatus {
    Planned,
    Running,
    Done,
    Failed,
    Skipped,
}

impl ExperimentStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ExperimentStatus::Done | ExperimentStatus::Failed | ExperimentStatus::Skipped)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentStatus::Planned => "PLANNED",
            ExperimentStatus::Running => "RUNNING",
            ExperimentStatus::Done => "DONE",
            ExperimentStatus::Failed => "FAILED",
            ExperimentStatus::Skipped => "SKIPPED",
        }
    }
}

impl std::str::FromStr for ExperimentStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            ExperimentStatus::Planned,
            ExperimentStatus::Running,
            ExperimentStatus::Done,
            ExperimentStatus::Failed,
            ExperimentStatus::Skipped,
        ]
        .into_iter()
        .find(|st| st.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("unknown experiment status {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRef {
    pub step: String,
    pub module_id: ModuleId,
    pub module_name: String,
    pub version: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub planner: String,
    #[serde(default)]
    pub providers: Vec<ProviderRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub campaign_id: String,
    pub index: u64,
    pub params: Record,
    #[serde(default)]
    pub step_results: BTreeMap<String, Record>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_value: Option<f64>,
    pub status: ExperimentStatus,
    pub attempts: u32,
    pub started: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended: Option<u64>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExperimentRecord {
    /// Objective as the planners see it: only DONE experiments count.
    pub fn done_objective(&self) -> Option<f64> {
        (self.status == ExperimentStatus::Done).then_some(self.objective_value).flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CampaignStatus {
    Draft,
    Running,
    Paused,
    Completed,
    Aborted,
    Failed,
}

impl CampaignStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, CampaignStatus::Completed | CampaignStatus::Aborted | CampaignStatus::Failed)
    }
}

impl fmt::Display for CampaignStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CampaignStatus::Draft => "DRAFT",
            CampaignStatus::Running => "RUNNING",
            CampaignStatus::Paused => "PAUSED",
            CampaignStatus::Completed => "COMPLETED",
            CampaignStatus::Aborted => "ABORTED",
            CampaignStatus::Failed => "FAILED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StopReason {
    BudgetExhausted,
    TargetReached,
    WallClockExceeded,
    PlannerExhausted,
    Aborted,
    FatalError,
}

impl StopReason {
    /// Campaign status a stop with this reason lands in.
    pub fn final_status(self) -> CampaignStatus {
        match self {
            StopReason::Aborted => CampaignStatus::Aborted,
            StopReason::FatalError => CampaignStatus::Failed,
            _ => CampaignStatus::Completed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Resume,
    Abort,
}

impl std::str::FromStr for ControlAction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "start" => Ok(ControlAction::Start),
            "pause" => Ok(ControlAction::Pause),
            "resume" => Ok(ControlAction::Resume),
            "abort" => Ok(ControlAction::Abort),
            other => Err(format!("unknown action {other}")),
        }
    }
}
