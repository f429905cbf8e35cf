//! Live view of connected modules: identity, capabilities, status and
//! heartbeat liveness.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::clock::{Clock, MonotonicClock, SystemClock};
use crate::wire::{
    validate_descriptor, CapabilitySchema, CoerceError, ModuleDescriptor, Record, ReportedStatus, Role, Violation,
};

/// A module is stale once it has been silent for more than this many intervals.
pub const STALE_INTERVALS: u64 = 3;
pub const SWEEP_PERIOD: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModuleId(pub u64);

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m-{}", self.0)
    }
}

impl FromStr for ModuleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.strip_prefix("m-")
            .and_then(|n| n.parse::<u64>().ok())
            .filter(|&n| n > 0)
            .map(ModuleId)
            .ok_or_else(|| format!("not a module id: {s}"))
    }
}

impl Serialize for ModuleId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModuleId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModuleStatus {
    Ready,
    Busy,
    Offline,
    Faulted,
}

impl ModuleStatus {
    /// READY or BUSY.
    pub fn is_live(self) -> bool {
        matches!(self, ModuleStatus::Ready | ModuleStatus::Busy)
    }
}

impl From<ReportedStatus> for ModuleStatus {
    fn from(s: ReportedStatus) -> Self {
        match s {
            ReportedStatus::Ready => ModuleStatus::Ready,
            ReportedStatus::Busy => ModuleStatus::Busy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRecord {
    pub module_id: ModuleId,
    pub descriptor: ModuleDescriptor,
    pub connection_id: u64,
    pub status: ModuleStatus,
    /// Monotonic milliseconds.
    pub last_heartbeat: u64,
    /// Unix milliseconds.
    pub registered_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryEventKind {
    ModuleRegistered,
    ModuleOffline,
    ModuleRecovered,
    ModuleUnregistered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEvent {
    pub kind: RegistryEventKind,
    pub module_id: ModuleId,
    pub module_name: String,
    /// Unix milliseconds.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutput {
    pub outputs: Record,
    pub elapsed_ms: u64,
}

/// Failures of a single capability invocation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("no live provider")]
    NoProvider,
    #[error("no result within {0} ms")]
    Timeout(u64),
    #[error("module error {code}: {detail}")]
    ModuleError { code: String, detail: String },
    #[error("result violates the capability schema: {0}")]
    SchemaViolation(String),
    #[error("input rejected: {0}")]
    Coercion(#[from] CoerceError),
}

impl ExecError {
    pub fn code(&self) -> &str {
        match self {
            ExecError::NoProvider => "NoProvider",
            ExecError::Timeout(_) => "Timeout",
            ExecError::ModuleError { .. } => "ModuleError",
            ExecError::SchemaViolation(_) => "SchemaViolation",
            ExecError::Coercion(e) => e.code(),
        }
    }
}

/// Something that can carry requests to one connected module.
pub trait ModuleLink: Send + Sync {
    fn connection_id(&self) -> u64;

    /// Sends one request and waits at most `timeout` for its result.
    fn execute(&self, capability: &str, inputs: Record, timeout: Duration) -> Result<ExecOutput, ExecError>;

    /// Tears the link down; requests in flight fail with [`ExecError::NoProvider`].
    fn close(&self, reason: &str);
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegistryError {
    #[error("invalid descriptor: {}", fmt_violations(.0))]
    InvalidDescriptor(Vec<Violation>),
    #[error("a live module is already named {0:?}")]
    DuplicateName(String),
    #[error("unknown module {0}")]
    UnknownModule(String),
    #[error("no live provider for {role} capability {capability:?}")]
    NoProvider { capability: String, role: Role },
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// The module chosen to serve one capability call.
#[derive(Clone)]
pub struct Provider {
    pub module_id: ModuleId,
    pub module_name: String,
    pub version: String,
    pub schema: CapabilitySchema,
    pub link: Arc<dyn ModuleLink>,
}

impl fmt::Debug for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Provider")
            .field("module_id", &self.module_id)
            .field("module_name", &self.module_name)
            .field("capability", &self.schema.name)
            .finish()
    }
}

/// A capability as advertised by some registered module.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub module_id: ModuleId,
    pub live: bool,
    pub schema: CapabilitySchema,
}

struct Entry {
    record: ModuleRecord,
    link: Arc<dyn ModuleLink>,
}

#[derive(Default)]
struct Inner {
    last_id: u64,
    modules: BTreeMap<ModuleId, Entry>,
}

type Listener = Box<dyn Fn(&RegistryEvent) + Send + Sync>;

pub struct Registry {
    inner: Mutex<Inner>,
    listeners: RwLock<Vec<Listener>>,
    monotonic: Arc<dyn Clock>,
    wall: Arc<dyn Clock>,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::with_clocks(Arc::new(MonotonicClock::new()), Arc::new(SystemClock))
    }

    pub fn with_clocks(monotonic: Arc<dyn Clock>, wall: Arc<dyn Clock>) -> Self {
        Self { inner: Mutex::new(Inner::default()), listeners: RwLock::new(Vec::new()), monotonic, wall }
    }

    /// Adds a sink that sees every event, in transition order. Sinks run
    /// under the registry lock and must not call back into the registry.
    pub fn subscribe(&self, listener: impl Fn(&RegistryEvent) + Send + Sync + 'static) {
        self.listeners.write().push(Box::new(listener));
    }

    pub fn now(&self) -> u64 {
        self.monotonic.now_ms()
    }

    fn emit(&self, kind: RegistryEventKind, record: &ModuleRecord) {
        let event = RegistryEvent {
            kind,
            module_id: record.module_id,
            module_name: record.descriptor.module_name.clone(),
            timestamp: self.wall.now_ms(),
        };
        for l in self.listeners.read().iter() {
            l(&event);
        }
    }

    pub fn register(&self, descriptor: ModuleDescriptor, link: Arc<dyn ModuleLink>) -> Result<ModuleId, RegistryError> {
        let violations = validate_descriptor(&descriptor);
        if !violations.is_empty() {
            return Err(RegistryError::InvalidDescriptor(violations));
        }
        let mut inner = self.inner.lock();
        let holder = inner
            .modules
            .values()
            .find(|e| e.record.descriptor.module_name == descriptor.module_name)
            .map(|e| (e.record.module_id, e.record.status));
        if let Some((old, status)) = holder {
            if status.is_live() {
                return Err(RegistryError::DuplicateName(descriptor.module_name));
            }
            // A stale or faulted holder gives way to the newcomer.
            let entry = inner.modules.remove(&old).expect("holder present");
            self.emit(RegistryEventKind::ModuleUnregistered, &entry.record);
            entry.link.close("superseded by a new registration");
        }
        inner.last_id += 1;
        let id = ModuleId(inner.last_id);
        let record = ModuleRecord {
            module_id: id,
            descriptor,
            connection_id: link.connection_id(),
            status: ModuleStatus::Ready,
            last_heartbeat: self.monotonic.now_ms(),
            registered_at: self.wall.now_ms(),
        };
        self.emit(RegistryEventKind::ModuleRegistered, &record);
        inner.modules.insert(id, Entry { record, link });
        Ok(id)
    }

    pub fn heartbeat(&self, id: ModuleId, status: ReportedStatus) -> Result<(), RegistryError> {
        let now = self.monotonic.now_ms();
        let mut inner = self.inner.lock();
        let entry = inner.modules.get_mut(&id).ok_or_else(|| RegistryError::UnknownModule(id.to_string()))?;
        entry.record.last_heartbeat = now;
        match entry.record.status {
            ModuleStatus::Faulted => {}
            ModuleStatus::Offline => {
                entry.record.status = status.into();
                self.emit(RegistryEventKind::ModuleRecovered, &entry.record);
            }
            _ => entry.record.status = status.into(),
        }
        Ok(())
    }

    /// Marks every module silent for more than three intervals OFFLINE.
    pub fn sweep_stale(&self, now: u64) -> Vec<ModuleId> {
        let mut inner = self.inner.lock();
        let mut out = Vec::new();
        for entry in inner.modules.values_mut() {
            let r = &mut entry.record;
            if r.status == ModuleStatus::Offline {
                continue;
            }
            let limit = STALE_INTERVALS * r.descriptor.heartbeat_interval_ms;
            if now.saturating_sub(r.last_heartbeat) > limit {
                r.status = ModuleStatus::Offline;
                self.emit(RegistryEventKind::ModuleOffline, r);
                out.push(r.module_id);
            }
        }
        out
    }

    pub fn sweep(&self) -> Vec<ModuleId> {
        self.sweep_stale(self.monotonic.now_ms())
    }

    /// Lowest-numbered READY/BUSY module offering `(capability, role)`.
    pub fn resolve_capability(&self, capability: &str, role: Role) -> Result<Provider, RegistryError> {
        let inner = self.inner.lock();
        inner
            .modules
            .values()
            .filter(|e| e.record.status.is_live())
            .find_map(|e| {
                let schema = e.record.descriptor.capability(capability, role)?;
                Some(Provider {
                    module_id: e.record.module_id,
                    module_name: e.record.descriptor.module_name.clone(),
                    version: e.record.descriptor.version.clone(),
                    schema: schema.clone(),
                    link: e.link.clone(),
                })
            })
            .ok_or_else(|| RegistryError::NoProvider { capability: capability.to_owned(), role })
    }

    /// Like [`resolve_capability`](Self::resolve_capability) but pinned to one module.
    pub fn provider(&self, id: ModuleId, capability: &str) -> Result<Provider, RegistryError> {
        let inner = self.inner.lock();
        let e = inner.modules.get(&id).ok_or_else(|| RegistryError::UnknownModule(id.to_string()))?;
        let schema = e
            .record
            .descriptor
            .capabilities
            .iter()
            .find(|c| c.name == capability)
            .ok_or_else(|| RegistryError::UnknownModule(format!("{id}/{capability}")))?;
        if !e.record.status.is_live() {
            return Err(RegistryError::NoProvider { capability: capability.to_owned(), role: schema.role });
        }
        Ok(Provider {
            module_id: id,
            module_name: e.record.descriptor.module_name.clone(),
            version: e.record.descriptor.version.clone(),
            schema: schema.clone(),
            link: e.link.clone(),
        })
    }

    pub fn unregister(&self, id: ModuleId) -> Result<(), RegistryError> {
        let entry = {
            let mut inner = self.inner.lock();
            let entry = inner.modules.remove(&id).ok_or_else(|| RegistryError::UnknownModule(id.to_string()))?;
            self.emit(RegistryEventKind::ModuleUnregistered, &entry.record);
            entry
        };
        entry.link.close("unregistered");
        Ok(())
    }

    /// Same effect as [`unregister`](Self::unregister) for whichever module
    /// holds the connection.
    pub fn connection_closed(&self, connection_id: u64) -> Option<ModuleId> {
        let id = {
            let inner = self.inner.lock();
            inner.modules.values().find(|e| e.record.connection_id == connection_id).map(|e| e.record.module_id)
        }?;
        self.unregister(id).ok().map(|_| id)
    }

    pub fn mark_faulted(&self, id: ModuleId) {
        if let Some(e) = self.inner.lock().modules.get_mut(&id) {
            e.record.status = ModuleStatus::Faulted;
        }
    }

    pub fn list(&self) -> Vec<ModuleRecord> {
        self.inner.lock().modules.values().map(|e| e.record.clone()).collect()
    }

    pub fn get(&self, id: ModuleId) -> Option<ModuleRecord> {
        self.inner.lock().modules.get(&id).map(|e| e.record.clone())
    }

    /// Every capability currently advertised, live or not.
    pub fn catalog(&self) -> Vec<CatalogEntry> {
        let inner = self.inner.lock();
        inner
            .modules
            .values()
            .flat_map(|e| {
                e.record.descriptor.capabilities.iter().map(|c| CatalogEntry {
                    module_id: e.record.module_id,
                    live: e.record.status.is_live(),
                    schema: c.clone(),
                })
            })
            .collect()
    }

    /// Runs [`sweep`](Self::sweep) every `period` on a background thread.
    pub fn spawn_sweeper(self: &Arc<Self>, period: Duration) -> Sweeper {
        let stop = Arc::new(AtomicBool::new(false));
        let registry = Arc::clone(self);
        let flag = Arc::clone(&stop);
        let handle = std::thread::Builder::new()
            .name("registry-sweeper".into())
            .spawn(move || {
                let mut next = std::time::Instant::now() + period;
                while !flag.load(Ordering::Relaxed) {
                    std::thread::sleep(next.saturating_duration_since(std::time::Instant::now()));
                    next += period;
                    for id in registry.sweep() {
                        log::warn!("module {id} missed its heartbeats; marked OFFLINE");
                    }
                }
            })
            .expect("spawn sweeper thread");
        Sweeper { stop, handle: Some(handle) }
    }
}

/// Stops the background sweep when dropped.
pub struct Sweeper {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for Sweeper {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
