use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::JournalError;

/// Durable byte sink behind the journal. `append` must not return until the
/// bytes survive a crash; a failed append leaves no partial line behind.
pub trait Storage: Send {
    /// Everything previously written.
    fn load(&mut self) -> Result<Vec<u8>, JournalError>;

    fn append(&mut self, bytes: &[u8]) -> Result<(), JournalError>;

    /// Drops everything at and after `len`.
    fn truncate(&mut self, len: u64) -> Result<(), JournalError>;
}

fn io_failure(e: std::io::Error) -> JournalError {
    JournalError::IoFailure(e.to_string())
}

/// Newline-delimited journal file, fsynced on every append.
pub struct FileStorage {
    path: PathBuf,
    file: File,
    len: u64,
}

impl FileStorage {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_failure)?;
        }
        let file = OpenOptions::new().read(true).append(true).create(true).open(&path).map_err(io_failure)?;
        let len = file.metadata().map_err(io_failure)?.len();
        Ok(Self { path, file, len })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Storage for FileStorage {
    fn load(&mut self) -> Result<Vec<u8>, JournalError> {
        let mut buf = Vec::new();
        self.file.seek(SeekFrom::Start(0)).map_err(io_failure)?;
        self.file.read_to_end(&mut buf).map_err(io_failure)?;
        self.len = buf.len() as u64;
        Ok(buf)
    }

    fn append(&mut self, bytes: &[u8]) -> Result<(), JournalError> {
        let res = self.file.write_all(bytes).and_then(|_| self.file.sync_data());
        if let Err(e) = res {
            // Do not leave a torn line in front of the next append.
            let _ = self.file.set_len(self.len);
            return Err(io_failure(e));
        }
        self.len += bytes.len() as u64;
        Ok(())
    }

    fn truncate(&mut self, len: u64) -> Result<(), JournalError> {
        self.file.set_len(len).and_then(|_| self.file.sync_all()).map_err(io_failure)?;
        self.len = len;
        Ok(())
    }
}

/// In-memory storage with an optional size limit and injectable failures.
#[derive(Clone, Default)]
pub struct MemoryStorage {
    data: Arc<Mutex<Vec<u8>>>,
    capacity: Option<usize>,
    fail: Arc<AtomicBool>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity_limit(limit: usize) -> Self {
        Self { capacity: Some(limit), ..Self::default() }
    }

    /// Starts from existing bytes, e.g. a copy of a crashed journal.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { data: Arc::new(Mutex::new(bytes)), ..Self::default() }
    }

    /// Makes every append fail until cleared.
    pub fn set_failing(&self, failing: bool) {
        self.fail.store(failing, Ordering::SeqCst);
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.data.lock().clone()
    }
}

impl Storage for MemoryStorage {
    fn load(&mut self) -> Result<Vec<u8>, JournalError> {
        Ok(self.data.lock().clone())
    }

    fn append(&mut self, bytes: &[u8]) -> Result<(), JournalError> {
        if self.fail.load(Ordering::SeqCst) {
            return Err(JournalError::IoFailure("injected failure".into()));
        }
        let mut data = self.data.lock();
        if let Some(cap) = self.capacity {
            if data.len() + bytes.len() > cap {
                return Err(JournalError::StorageFull);
            }
        }
        data.extend_from_slice(bytes);
        Ok(())
    }

    fn truncate(&mut self, len: u64) -> Result<(), JournalError> {
        self.data.lock().truncate(len as usize);
        Ok(())
    }
}
