//! The `/api/events` body: history from `since`, then the live tail.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use aeos_core::service::{ApiEvent, Core};
use aeos_core::wire::{canonical_encode, to_data};
use axum::body::Bytes;
use futures::Stream;
use tokio::sync::watch;

pub const KEEPALIVE_LINE: &[u8] = b": keepalive\n";

struct Cursor {
    core: Arc<Core>,
    head: watch::Receiver<u64>,
    /// Last journal seq already examined.
    scanned: u64,
    keepalive: Duration,
    pending: VecDeque<Bytes>,
}

fn line(event: &ApiEvent) -> Option<Bytes> {
    let mut bytes = canonical_encode(&to_data(event).ok()?).ok()?;
    bytes.push(b'\n');
    Some(Bytes::from(bytes))
}

impl Cursor {
    fn fill(&mut self) {
        for entry in self.core.journal().since(self.scanned) {
            self.scanned = entry.seq;
            if let Some(l) = ApiEvent::from_entry(&entry).as_ref().and_then(line) {
                self.pending.push_back(l);
            }
        }
    }
}

/// Newline-delimited canonical-JSON events with seq greater than `since`.
/// A keepalive comment line is sent after `keepalive` without events.
pub fn stream(
    core: Arc<Core>,
    head: watch::Receiver<u64>,
    since: u64,
    keepalive: Duration,
) -> impl Stream<Item = Result<Bytes, Infallible>> + Send {
    let cursor = Cursor { core, head, scanned: since, keepalive, pending: VecDeque::new() };
    futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(l) = c.pending.pop_front() {
                return Some((Ok(l), c));
            }
            c.head.borrow_and_update();
            c.fill();
            if !c.pending.is_empty() {
                continue;
            }
            match tokio::time::timeout(c.keepalive, c.head.changed()).await {
                Err(_) => return Some((Ok(Bytes::from_static(KEEPALIVE_LINE)), c)),
                Ok(Ok(())) => continue,
                Ok(Err(_)) => return None,
            }
        }
    })
}
