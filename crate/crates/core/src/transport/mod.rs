//! Ways of reaching a module: over TCP with the framed protocol, or
//! in-process for embedded modules and test doubles.

mod client;
mod local;
mod tcp;

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::time::Duration;

use parking_lot::Mutex;

pub use client::{ClientError, ModuleClient};
pub use local::LocalModule;
pub use tcp::{ModuleListener, TcpLink};

use crate::registry::{ExecError, ExecOutput};
use crate::wire::Record;

/// A failure reported by a module handler; travels as EXECUTE_ERROR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandlerFailure {
    pub code: String,
    pub detail: String,
}

impl HandlerFailure {
    pub fn new(code: impl Into<String>, detail: impl Into<String>) -> Self {
        Self { code: code.into(), detail: detail.into() }
    }
}

pub type Handler = Box<dyn FnMut(&Record) -> Result<Record, HandlerFailure> + Send>;

static NEXT_CONNECTION: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_connection_id() -> u64 {
    NEXT_CONNECTION.fetch_add(1, Ordering::Relaxed)
}

type Reply = Result<ExecOutput, ExecError>;

/// Requests awaiting a reply on one connection.
#[derive(Default)]
pub(crate) struct Pending {
    waiters: Mutex<HashMap<u64, SyncSender<Reply>>>,
    closed: AtomicBool,
    issued: AtomicU64,
}

impl Pending {
    /// Allocates the next request id (strictly increasing from 1).
    pub(crate) fn open(&self) -> Result<(u64, Receiver<Reply>), ExecError> {
        let mut waiters = self.waiters.lock();
        if self.closed.load(Ordering::SeqCst) {
            return Err(ExecError::NoProvider);
        }
        let id = self.issued.fetch_add(1, Ordering::SeqCst) + 1;
        let (tx, rx) = mpsc::sync_channel(1);
        waiters.insert(id, tx);
        Ok((id, rx))
    }

    /// Delivers a reply. Returns false when no request with that id was ever issued.
    pub(crate) fn complete(&self, id: u64, reply: Reply) -> bool {
        if let Some(tx) = self.waiters.lock().remove(&id) {
            let _ = tx.send(reply);
            return true;
        }
        // Late replies to timed-out requests are dropped quietly.
        id != 0 && id <= self.issued.load(Ordering::SeqCst)
    }

    pub(crate) fn wait(&self, id: u64, rx: Receiver<Reply>, timeout: Duration) -> Reply {
        match rx.recv_timeout(timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.waiters.lock().remove(&id);
                // A reply may have raced the timeout.
                rx.try_recv().unwrap_or(Err(ExecError::Timeout(timeout.as_millis() as u64)))
            }
            Err(RecvTimeoutError::Disconnected) => Err(ExecError::NoProvider),
        }
    }

    pub(crate) fn abandon(&self, id: u64) {
        self.waiters.lock().remove(&id);
    }

    pub(crate) fn close(&self) {
        let mut waiters = self.waiters.lock();
        self.closed.store(true, Ordering::SeqCst);
        for (_, tx) in waiters.drain() {
            let _ = tx.send(Err(ExecError::NoProvider));
        }
    }

    pub(crate) fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}
