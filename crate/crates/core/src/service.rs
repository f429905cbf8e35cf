//! The assembled core: registry, journal and campaigns behind one handle,
//! with the operations the HTTP gateway exposes.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campaign::{
    compile_campaign, dispatch, CampaignEvent, CampaignHandle, CampaignSpec, CampaignState, CampaignStatus,
    ControlAction, Engine, EngineError, ExperimentRecord, ExperimentStatus, StepOutput,
};
use crate::clock::{Clock, MonotonicClock, SystemClock};
use crate::journal::{
    query_experiments, replay, EntryKind, ExperimentQuery, ExportFormat, Journal, JournalEntry, JournalError,
    ReplayError,
};
use crate::registry::{
    ExecError, ModuleId, ModuleRecord, Registry, RegistryError, RegistryEvent, Sweeper, SWEEP_PERIOD,
};
use crate::wire::{from_data, to_data, DataValue, Record, Violation};

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown campaign {0}")]
    UnknownCampaign(String),
    #[error("unknown module {0}")]
    UnknownModule(String),
    #[error("campaign {0} already exists")]
    DuplicateCampaign(String),
    #[error("validation failed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("export failed: {0}")]
    Export(String),
}

pub struct CoreConfig {
    /// Journal directory; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Registry sweep period; `None` disables the background sweeper.
    pub sweep_period: Option<Duration>,
    /// Wall clock for journal and experiment timestamps.
    pub wall_clock: Arc<dyn Clock>,
    /// Clock for heartbeat ages.
    pub monotonic_clock: Arc<dyn Clock>,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            sweep_period: Some(SWEEP_PERIOD),
            wall_clock: Arc::new(SystemClock),
            monotonic_clock: Arc::new(MonotonicClock::new()),
        }
    }
}

/// A campaign as listed, without its experiment history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub campaign_id: String,
    pub name: String,
    pub status: CampaignStatus,
    pub experiments: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_objective: Option<f64>,
}

impl From<&CampaignState> for CampaignSummary {
    fn from(s: &CampaignState) -> Self {
        Self {
            campaign_id: s.campaign_id.clone(),
            name: s.spec.name.clone(),
            status: s.status,
            experiments: s.experiments.len() as u64,
            best_index: s.best_index,
            best_objective: s.best().and_then(|b| b.objective_value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiEventType {
    ModuleRegistered,
    ModuleOffline,
    ModuleRecovered,
    ModuleUnregistered,
    CampaignStatus,
    ExperimentDone,
    ExperimentFailed,
}

/// One line of the live event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub seq: u64,
    #[serde(rename = "type")]
    pub kind: ApiEventType,
    pub body: Record,
}

impl ApiEvent {
    /// The stream event for a journal entry, if it produces one.
    pub fn from_entry(entry: &JournalEntry) -> Option<Self> {
        let kind = match entry.kind {
            EntryKind::ModuleEvent => from_data::<ApiEventType>(entry.body.get("event")?).ok().filter(|k| {
                matches!(
                    k,
                    ApiEventType::ModuleRegistered
                        | ApiEventType::ModuleOffline
                        | ApiEventType::ModuleRecovered
                        | ApiEventType::ModuleUnregistered
                )
            })?,
            EntryKind::CampaignStatusChanged => ApiEventType::CampaignStatus,
            EntryKind::ExperimentUpdated => {
                let status = entry.body.get("record")?.as_record()?.get("status")?;
                match from_data::<ExperimentStatus>(status).ok()? {
                    ExperimentStatus::Done => ApiEventType::ExperimentDone,
                    ExperimentStatus::Failed | ExperimentStatus::Skipped => ApiEventType::ExperimentFailed,
                    _ => return None,
                }
            }
            EntryKind::CampaignCreated | EntryKind::ExperimentAppended => return None,
        };
        Some(Self { seq: entry.seq, kind, body: entry.body.clone() })
    }
}

fn module_event_body(ev: &RegistryEvent) -> Record {
    let mut r = match to_data(ev) {
        Ok(DataValue::Record(r)) => r,
        _ => Record::new(),
    };
    if let Some(kind) = r.remove("kind") {
        r.insert("event".into(), kind);
    }
    r
}

pub struct Core {
    registry: Arc<Registry>,
    journal: Arc<Journal>,
    engine: Engine,
    campaigns: RwLock<BTreeMap<String, Arc<CampaignHandle>>>,
    next_campaign: AtomicU64,
    warnings: Vec<String>,
    _sweeper: Option<Sweeper>,
}

fn counter_of(id: &str) -> Option<u64> {
    id.strip_prefix("c-").and_then(|n| n.parse().ok())
}

impl Core {
    /// Opens (or creates) the journal, replays it, and wires the registry
    /// into it. Campaigns that were RUNNING come back PAUSED.
    pub fn open(config: CoreConfig) -> Result<Self, CoreError> {
        let (journal, mut warnings) = match &config.data_dir {
            Some(dir) => Journal::open_dir(dir, Arc::clone(&config.wall_clock))?,
            None => {
                Journal::with_storage(Box::new(crate::journal::MemoryStorage::new()), Arc::clone(&config.wall_clock))?
            }
        };
        let journal = Arc::new(journal);
        Self::from_journal(journal, config, &mut warnings)
    }

    /// Builds a core over an already opened journal.
    pub fn from_journal(
        journal: Arc<Journal>,
        config: CoreConfig,
        warnings: &mut Vec<String>,
    ) -> Result<Self, CoreError> {
        let replayed = replay(&journal)?;
        for ev in &replayed.recovery {
            journal.append(ev.kind(), ev.to_body()?)?;
            if let CampaignEvent::StatusChanged { campaign_id, .. } = ev {
                warnings.push(format!("campaign {campaign_id} was running; restored as PAUSED"));
            }
        }

        let registry =
            Arc::new(Registry::with_clocks(Arc::clone(&config.monotonic_clock), Arc::clone(&config.wall_clock)));
        let sink = Arc::clone(&journal);
        registry.subscribe(move |ev| {
            if let Err(e) = sink.append(EntryKind::ModuleEvent, module_event_body(ev)) {
                log::error!("cannot journal {:?} for {}: {e}", ev.kind, ev.module_id);
            }
        });
        let engine = Engine {
            registry: Arc::clone(&registry),
            journal: Arc::clone(&journal),
            clock: Arc::clone(&config.wall_clock),
        };
        let next = replayed.campaigns.keys().filter_map(|id| counter_of(id)).max().unwrap_or(0) + 1;
        let campaigns = replayed
            .campaigns
            .into_iter()
            .map(|(id, state)| (id, CampaignHandle::new(state, engine.clone())))
            .collect();
        let sweeper = config.sweep_period.map(|p| registry.spawn_sweeper(p));
        Ok(Self {
            registry,
            journal,
            engine,
            campaigns: RwLock::new(campaigns),
            next_campaign: AtomicU64::new(next),
            warnings: warnings.clone(),
            _sweeper: sweeper,
        })
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn journal(&self) -> &Arc<Journal> {
        &self.journal
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Warnings raised while recovering the journal.
    pub fn recovery_warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn modules(&self) -> Vec<ModuleRecord> {
        self.registry.list()
    }

    pub fn module(&self, id: &str) -> Result<ModuleRecord, CoreError> {
        id.parse::<ModuleId>()
            .ok()
            .and_then(|m| self.registry.get(m))
            .ok_or_else(|| CoreError::UnknownModule(id.to_owned()))
    }

    /// Validates and stores a new DRAFT campaign. Returns it with any
    /// compile warnings.
    pub fn create_campaign(&self, spec: CampaignSpec) -> Result<(CampaignState, Vec<String>), CoreError> {
        let compiled = compile_campaign(&spec, &self.registry.catalog()).map_err(CoreError::Invalid)?;
        let mut campaigns = self.campaigns.write();
        let id = match &spec.campaign_id {
            Some(id) => id.clone(),
            None => loop {
                let id = format!("c-{}", self.next_campaign.fetch_add(1, Ordering::SeqCst));
                if !campaigns.contains_key(&id) {
                    break id;
                }
            },
        };
        if campaigns.contains_key(&id) {
            return Err(CoreError::DuplicateCampaign(id));
        }
        let mut spec = compiled.spec;
        spec.campaign_id = Some(id.clone());
        let created = CampaignEvent::Created { campaign_id: id.clone(), spec, grid_size: compiled.grid_size };
        self.journal.append(created.kind(), created.to_body()?)?;
        let state = CampaignState::from_created(&created).expect("created event");
        campaigns.insert(id, CampaignHandle::new(state.clone(), self.engine.clone()));
        Ok((state, compiled.warnings))
    }

    pub fn campaign(&self, id: &str) -> Result<Arc<CampaignHandle>, CoreError> {
        self.campaigns.read().get(id).cloned().ok_or_else(|| CoreError::UnknownCampaign(id.to_owned()))
    }

    pub fn campaign_state(&self, id: &str) -> Result<CampaignState, CoreError> {
        Ok(self.campaign(id)?.snapshot())
    }

    pub fn campaigns(&self) -> Vec<CampaignSummary> {
        let handles: Vec<_> = self.campaigns.read().values().cloned().collect();
        handles.iter().map(|h| h.with_state(|s| CampaignSummary::from(s))).collect()
    }

    pub fn control(&self, id: &str, action: ControlAction) -> Result<CampaignState, CoreError> {
        Ok(self.campaign(id)?.control(action)?)
    }

    pub fn experiments(&self, id: &str, query: &ExperimentQuery) -> Result<Vec<ExperimentRecord>, CoreError> {
        Ok(self.campaign(id)?.with_state(|s| query_experiments(s, query)))
    }

    pub fn export(&self, id: &str, format: ExportFormat) -> Result<Vec<u8>, CoreError> {
        self.campaign(id)?.with_state(|s| format.export(s)).map_err(|e| CoreError::Export(e.to_string()))
    }

    /// Runs one capability outside any campaign and journals the call.
    pub fn manual_execute(&self, module_id: &str, capability: &str, inputs: &Record) -> Result<StepOutput, CoreError> {
        let id = module_id.parse::<ModuleId>().map_err(|_| CoreError::UnknownModule(module_id.to_owned()))?;
        let provider = self.registry.provider(id, capability).map_err(|e| match e {
            RegistryError::NoProvider { .. } => CoreError::Exec(ExecError::NoProvider),
            RegistryError::UnknownModule(what) => CoreError::UnknownModule(what),
            other => CoreError::UnknownModule(other.to_string()),
        })?;
        let result = dispatch(&provider, inputs);
        let mut audit = Record::new();
        audit.insert("event".into(), DataValue::from("manual_execute"));
        audit.insert("module_id".into(), DataValue::from(id.to_string()));
        audit.insert("capability".into(), DataValue::from(capability));
        audit.insert("inputs".into(), DataValue::Record(inputs.clone()));
        match &result {
            Ok(out) => {
                audit.insert("ok".into(), DataValue::Bool(true));
                audit.insert("outputs".into(), DataValue::Record(out.outputs.clone()));
            }
            Err(e) => {
                audit.insert("ok".into(), DataValue::Bool(false));
                audit.insert("error".into(), DataValue::from(e.code()));
                audit.insert("detail".into(), DataValue::from(e.to_string()));
            }
        }
        self.journal.append(EntryKind::ModuleEvent, audit)?;
        Ok(result?)
    }

    /// Stream events with seq greater than `since`.
    pub fn events_since(&self, since: u64) -> Vec<ApiEvent> {
        self.journal.since(since).iter().filter_map(|e| ApiEvent::from_entry(e)).collect()
    }
}
