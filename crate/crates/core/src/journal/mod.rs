//! Append-only event journal: the single durable record of everything that
//! changed campaign or module state.
//!
//! Entries are canonical-JSON lines with contiguous sequence numbers from 1.
//! Opening a journal re-reads it; a torn final line is cut off with a
//! warning, anything else unreadable is [`JournalError::CorruptEntry`].

mod export;
mod replay;
mod storage;

use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_csv, export_json, query_experiments, ExperimentQuery, ExportFormat};
pub use replay::{recovery_events, replay, replay_entries, ReplayError, ReplayedState};
pub use storage::{FileStorage, MemoryStorage, Storage};

use crate::clock::{Clock, SystemClock};
use crate::wire::{canonical_encode, from_data, parse, to_data, Record};

pub const JOURNAL_FILE: &str = "journal.ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntryKind {
    CampaignCreated,
    CampaignStatusChanged,
    ExperimentAppended,
    ExperimentUpdated,
    ModuleEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    /// Unix milliseconds.
    pub timestamp: u64,
    pub kind: EntryKind,
    pub body: Record,
}

impl JournalEntry {
    pub fn encode_line(&self) -> Result<Vec<u8>, JournalError> {
        let value = to_data(self).map_err(|e| JournalError::Encode(e.to_string()))?;
        let mut line = canonical_encode(&value).map_err(|e| JournalError::Encode(e.to_string()))?;
        line.push(b'\n');
        Ok(line)
    }

    pub fn decode_line(line: &[u8]) -> Result<Self, String> {
        let value = parse(line).map_err(|e| e.to_string())?;
        from_data(&value).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JournalError {
    #[error("storage full")]
    StorageFull,
    #[error("storage I/O failure: {0}")]
    IoFailure(String),
    #[error("corrupt journal entry at line {line}: {reason}")]
    CorruptEntry { line: usize, reason: String },
    #[error("entry cannot be encoded: {0}")]
    Encode(String),
}

type Hook = Box<dyn Fn(&JournalEntry) + Send + Sync>;

pub struct Journal {
    storage: Mutex<Box<dyn Storage>>,
    entries: RwLock<Vec<Arc<JournalEntry>>>,
    hooks: RwLock<Vec<Hook>>,
    clock: Arc<dyn Clock>,
}

/// Splits raw journal bytes into entries, returning the byte length of the
/// valid prefix and any recovery warnings.
fn recover(bytes: &[u8]) -> Result<(Vec<JournalEntry>, usize, Vec<String>), JournalError> {
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    let mut pos = 0;
    let mut line_no = 0;
    while pos < bytes.len() {
        line_no += 1;
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            warnings.push(format!(
                "journal ends in a partial line of {} bytes after seq {}; truncated",
                bytes.len() - pos,
                entries.len()
            ));
            break;
        };
        let end = pos + nl;
        let is_last = end + 1 == bytes.len();
        let parsed = JournalEntry::decode_line(&bytes[pos..end]).and_then(|e| {
            if e.seq == entries.len() as u64 + 1 {
                Ok(e)
            } else {
                Err(format!("expected seq {}, found {}", entries.len() + 1, e.seq))
            }
        });
        match parsed {
            Ok(e) => entries.push(e),
            Err(reason) if is_last => {
                warnings.push(format!("unreadable final journal line {line_no} ({reason}); truncated"));
                break;
            }
            Err(reason) => return Err(JournalError::CorruptEntry { line: line_no, reason }),
        }
        pos = end + 1;
    }
    Ok((entries, pos, warnings))
}

impl Journal {
    pub fn in_memory() -> Self {
        Self::with_storage(Box::new(MemoryStorage::new()), Arc::new(SystemClock)).expect("empty memory journal").0
    }

    /// Opens `<dir>/journal.ndjson`, creating it if needed.
    pub fn open_dir(dir: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<(Self, Vec<String>), JournalError> {
        let storage = FileStorage::open(dir.as_ref().join(JOURNAL_FILE))?;
        Self::with_storage(Box::new(storage), clock)
    }

    /// Loads whatever `storage` already holds, truncating a torn tail.
    pub fn with_storage(
        mut storage: Box<dyn Storage>,
        clock: Arc<dyn Clock>,
    ) -> Result<(Self, Vec<String>), JournalError> {
        let bytes = storage.load()?;
        let (entries, valid_len, warnings) = recover(&bytes)?;
        if valid_len < bytes.len() {
            storage.truncate(valid_len as u64)?;
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        let journal = Self {
            storage: Mutex::new(storage),
            entries: RwLock::new(entries.into_iter().map(Arc::new).collect()),
            hooks: RwLock::new(Vec::new()),
            clock,
        };
        Ok((journal, warnings))
    }

    /// Calls `hook` after every successful append, in seq order. Hooks run
    /// under the append lock and must not append themselves.
    pub fn subscribe(&self, hook: impl Fn(&JournalEntry) + Send + Sync + 'static) {
        self.hooks.write().push(Box::new(hook));
    }

    /// Durably appends one entry and returns its seq.
    pub fn append(&self, kind: EntryKind, body: Record) -> Result<u64, JournalError> {
        let mut storage = self.storage.lock();
        let seq = self.entries.read().len() as u64 + 1;
        let entry = JournalEntry { seq, timestamp: self.clock.now_ms(), kind, body };
        let line = entry.encode_line()?;
        storage.append(&line)?;
        let entry = Arc::new(entry);
        self.entries.write().push(Arc::clone(&entry));
        for h in self.hooks.read().iter() {
            h(&entry);
        }
        Ok(seq)
    }

    /// Seq of the last entry, 0 when empty.
    pub fn head(&self) -> u64 {
        self.entries.read().len() as u64
    }

    pub fn entries(&self) -> Vec<Arc<JournalEntry>> {
        self.entries.read().clone()
    }

    /// Entries with seq strictly greater than `seq`.
    pub fn since(&self, seq: u64) -> Vec<Arc<JournalEntry>> {
        let entries = self.entries.read();
        entries.get(seq.min(entries.len() as u64) as usize..).unwrap_or_default().to_vec()
    }

    /// Canonical bytes of the acknowledged journal.
    pub fn to_bytes(&self) -> Result<Vec<u8>, JournalError> {
        let mut out = Vec::new();
        for e in self.entries.read().iter() {
            out.extend(e.encode_line()?);
        }
        Ok(out)
    }
}
