use std::collections::BTreeMap;

use thiserror::Error;

use super::{EntryKind, Journal, JournalEntry};
use crate::campaign::{CampaignEvent, CampaignState, CampaignStatus, ExperimentStatus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("entry {seq}: {reason}")]
    CorruptEntry { seq: u64, reason: String },
}

/// Campaign state rebuilt from a journal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayedState {
    pub campaigns: BTreeMap<String, CampaignState>,
    /// Seq of the last entry replayed.
    pub head: u64,
    /// Changes applied on top of the journal to make the state safe to
    /// resume; a live core journals these after recovering.
    pub recovery: Vec<CampaignEvent>,
}

fn corrupt(entry: &JournalEntry, reason: impl Into<String>) -> ReplayError {
    ReplayError::CorruptEntry { seq: entry.seq, reason: reason.into() }
}

/// Applies every campaign entry in order, exactly as recorded.
pub fn replay_entries<'a>(
    entries: impl IntoIterator<Item = &'a JournalEntry>,
) -> Result<BTreeMap<String, CampaignState>, ReplayError> {
    let mut campaigns: BTreeMap<String, CampaignState> = BTreeMap::new();
    for entry in entries {
        let Some(event) = CampaignEvent::from_entry(entry) else { continue };
        let event = event.map_err(|e| corrupt(entry, e))?;
        let id = event.campaign_id().to_owned();
        if entry.kind == EntryKind::CampaignCreated {
            if campaigns.contains_key(&id) {
                return Err(corrupt(entry, format!("campaign {id} created twice")));
            }
            campaigns.insert(id, CampaignState::from_created(&event).expect("created event"));
            continue;
        }
        let state = campaigns.get_mut(&id).ok_or_else(|| corrupt(entry, format!("unknown campaign {id}")))?;
        if let CampaignEvent::ExperimentUpdated { record, .. } = &event {
            if record.index as usize >= state.experiments.len() {
                return Err(corrupt(entry, format!("update of missing experiment {}", record.index)));
            }
        }
        if let CampaignEvent::ExperimentAppended { record, .. } = &event {
            if record.index as usize != state.experiments.len() {
                return Err(corrupt(entry, format!("experiment {} appended out of order", record.index)));
            }
        }
        state.apply(&event);
    }
    Ok(campaigns)
}

/// Events that make recovered campaigns safe: RUNNING campaigns pause and
/// an experiment caught mid-flight is marked FAILED.
pub fn recovery_events(campaigns: &BTreeMap<String, CampaignState>, at: u64) -> Vec<CampaignEvent> {
    let mut out = Vec::new();
    for state in campaigns.values() {
        if let Some(rec) = state.in_flight() {
            let mut rec = rec.clone();
            rec.status = ExperimentStatus::Failed;
            rec.error = Some("interrupted".into());
            rec.ended = Some(at);
            out.push(CampaignEvent::ExperimentUpdated {
                campaign_id: state.campaign_id.clone(),
                record: rec,
                best_index: state.best_index,
            });
        }
        if state.status == CampaignStatus::Running {
            out.push(CampaignEvent::StatusChanged {
                campaign_id: state.campaign_id.clone(),
                status: CampaignStatus::Paused,
                reason: None,
                at,
            });
        }
    }
    out
}

/// Rebuilds campaign state from `journal`, with recovery applied.
pub fn replay(journal: &Journal) -> Result<ReplayedState, ReplayError> {
    let entries = journal.entries();
    let mut campaigns = replay_entries(entries.iter().map(|e| e.as_ref()))?;
    let at = entries.last().map_or(0, |e| e.timestamp);
    let recovery = recovery_events(&campaigns, at);
    for ev in &recovery {
        if let Some(state) = campaigns.get_mut(ev.campaign_id()) {
            state.apply(ev);
        }
    }
    Ok(ReplayedState { campaigns, head: journal.head(), recovery })
}
