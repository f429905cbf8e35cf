use serde::{Deserialize, Serialize};

use super::spec::{CampaignSpec, CampaignStatus, ExperimentRecord, ExperimentStatus, StopReason};
use crate::journal::{EntryKind, Journal, JournalEntry, JournalError};
use crate::planner::{best_so_far, Observation, PlannerState};
use crate::wire::{from_data, to_data, DataValue, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub campaign_id: String,
    pub spec: CampaignSpec,
    pub status: CampaignStatus,
    pub experiments: Vec<ExperimentRecord>,
    pub planner_state: PlannerState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_index: Option<u64>,
    /// Wall-clock ms of the first start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(default)]
    pub planner_exhausted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<u64>,
}

/// A state change, journaled before it is applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum CampaignEvent {
    Created {
        campaign_id: String,
        spec: CampaignSpec,
        #[serde(skip_serializing_if = "Option::is_none")]
        grid_size: Option<u64>,
    },
    StatusChanged {
        campaign_id: String,
        status: CampaignStatus,
        #[serde(skip_serializing_if = "Option::is_none")]
        reason: Option<StopReason>,
        at: u64,
    },
    ExperimentAppended {
        campaign_id: String,
        record: ExperimentRecord,
        planner_state: PlannerState,
    },
    ExperimentUpdated {
        campaign_id: String,
        record: ExperimentRecord,
        #[serde(skip_serializing_if = "Option::is_none")]
        best_index: Option<u64>,
    },
}

impl CampaignEvent {
    pub fn kind(&self) -> EntryKind {
        match self {
            CampaignEvent::Created { .. } => EntryKind::CampaignCreated,
            CampaignEvent::StatusChanged { .. } => EntryKind::CampaignStatusChanged,
            CampaignEvent::ExperimentAppended { .. } => EntryKind::ExperimentAppended,
            CampaignEvent::ExperimentUpdated { .. } => EntryKind::ExperimentUpdated,
        }
    }

    pub fn campaign_id(&self) -> &str {
        match self {
            CampaignEvent::Created { campaign_id, .. }
            | CampaignEvent::StatusChanged { campaign_id, .. }
            | CampaignEvent::ExperimentAppended { campaign_id, .. }
            | CampaignEvent::ExperimentUpdated { campaign_id, .. } => campaign_id,
        }
    }

    pub fn to_body(&self) -> Result<Record, JournalError> {
        match to_data(self) {
            Ok(DataValue::Record(r)) => Ok(r),
            Ok(other) => Err(JournalError::Encode(format!("event encoded as {}", other.kind_name()))),
            Err(e) => Err(JournalError::Encode(e.to_string())),
        }
    }

    /// The campaign event carried by a journal entry, if it is one.
    pub fn from_entry(entry: &JournalEntry) -> Option<Result<Self, String>> {
        let body = DataValue::Record(entry.body.clone());
        let parsed = match entry.kind {
            EntryKind::CampaignCreated => from_data::<CreatedBody>(&body).map(Into::into),
            EntryKind::CampaignStatusChanged => from_data::<StatusBody>(&body).map(Into::into),
            EntryKind::ExperimentAppended => from_data::<AppendedBody>(&body).map(Into::into),
            EntryKind::ExperimentUpdated => from_data::<UpdatedBody>(&body).map(Into::into),
            EntryKind::ModuleEvent => return None,
        };
        Some(parsed.map_err(|e| e.to_string()))
    }

    /// Journals the event, then applies it to `state`.
    pub fn commit(self, journal: &Journal, state: &mut CampaignState) -> Result<u64, JournalError> {
        let seq = journal.append(self.kind(), self.to_body()?)?;
        state.apply(&self);
        Ok(seq)
    }
}

// Untagged deserialization would be ambiguous, so each kind has its own shape.
#[derive(Deserialize)]
struct CreatedBody {
    campaign_id: String,
    spec: CampaignSpec,
    #[serde(default)]
    grid_size: Option<u64>,
}

#[derive(Deserialize)]
struct StatusBody {
    campaign_id: String,
    status: CampaignStatus,
    #[serde(default)]
    reason: Option<StopReason>,
    at: u64,
}

#[derive(Deserialize)]
struct AppendedBody {
    campaign_id: String,
    record: ExperimentRecord,
    planner_state: PlannerState,
}

#[derive(Deserialize)]
struct UpdatedBody {
    campaign_id: String,
    record: ExperimentRecord,
    #[serde(default)]
    best_index: Option<u64>,
}

impl From<CreatedBody> for CampaignEvent {
    fn from(b: CreatedBody) -> Self {
        CampaignEvent::Created { campaign_id: b.campaign_id, spec: b.spec, grid_size: b.grid_size }
    }
}

impl From<StatusBody> for CampaignEvent {
    fn from(b: StatusBody) -> Self {
        CampaignEvent::StatusChanged { campaign_id: b.campaign_id, status: b.status, reason: b.reason, at: b.at }
    }
}

impl From<AppendedBody> for CampaignEvent {
    fn from(b: AppendedBody) -> Self {
        CampaignEvent::ExperimentAppended {
            campaign_id: b.campaign_id,
            record: b.record,
            planner_state: b.planner_state,
        }
    }
}

impl From<UpdatedBody> for CampaignEvent {
    fn from(b: UpdatedBody) -> Self {
        CampaignEvent::ExperimentUpdated { campaign_id: b.campaign_id, record: b.record, best_index: b.best_index }
    }
}

impl CampaignState {
    /// A fresh DRAFT campaign.
    pub fn new(campaign_id: String, spec: CampaignSpec, grid_size: Option<u64>) -> Self {
        let planner_state = spec.planner.initial_state();
        Self {
            campaign_id,
            spec,
            status: CampaignStatus::Draft,
            experiments: Vec::new(),
            planner_state,
            best_index: None,
            started_at: None,
            stop_reason: None,
            planner_exhausted: false,
            grid_size,
        }
    }

    pub fn from_created(event: &CampaignEvent) -> Option<Self> {
        match event {
            CampaignEvent::Created { campaign_id, spec, grid_size } => {
                Some(Self::new(campaign_id.clone(), spec.clone(), *grid_size))
            }
            _ => None,
        }
    }

    pub fn apply(&mut self, event: &CampaignEvent) {
        match event {
            CampaignEvent::Created { .. } => {}
            CampaignEvent::StatusChanged { status, reason, at, .. } => {
                self.status = *status;
                if *status == CampaignStatus::Running && self.started_at.is_none() {
                    self.started_at = Some(*at);
                }
                if let Some(r) = reason {
                    self.stop_reason = Some(*r);
                    if *r == StopReason::PlannerExhausted {
                        self.planner_exhausted = true;
                    }
                }
            }
            CampaignEvent::ExperimentAppended { record, planner_state, .. } => {
                self.experiments.push(record.clone());
                self.planner_state = *planner_state;
            }
            CampaignEvent::ExperimentUpdated { record, best_index, .. } => {
                if let Some(slot) = self.experiments.get_mut(record.index as usize) {
                    *slot = record.clone();
                }
                self.best_index = *best_index;
            }
        }
    }

    /// Count toward the experiment budget: everything that ran to an end.
    pub fn finished_count(&self) -> u64 {
        self.experiments
            .iter()
            .filter(|e| matches!(e.status, ExperimentStatus::Done | ExperimentStatus::Failed))
            .count() as u64
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.experiments
            .iter()
            .map(|e| Observation { params: e.params.clone(), objective: e.done_objective() })
            .collect()
    }

    /// Best DONE experiment, recomputed from the history.
    pub fn compute_best(&self) -> Option<u64> {
        best_so_far(self.experiments.iter().map(|e| e.done_objective()), self.spec.objective.direction)
            .map(|i| i as u64)
    }

    pub fn best(&self) -> Option<&ExperimentRecord> {
        self.best_index.and_then(|i| self.experiments.get(i as usize))
    }

    /// The trailing experiment if it has not finished yet.
    pub fn in_flight(&self) -> Option<&ExperimentRecord> {
        self.experiments.last().filter(|e| !e.status.is_terminal())
    }
}
