use std::collections::HashMap;
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::{next_connection_id, Handler, Pending};
use crate::registry::{ExecError, ExecOutput, ModuleLink};
use crate::wire::Record;

struct Job {
    id: u64,
    capability: String,
    inputs: Record,
}

/// A module living inside the core process.
///
/// Handlers run one at a time on a dedicated worker thread, so callers see
/// the same timeout behaviour as with a remote module.
pub struct LocalModule {
    connection_id: u64,
    jobs: Mutex<Option<Sender<Job>>>,
    pending: Arc<Pending>,
}

impl LocalModule {
    pub fn new(handlers: HashMap<String, Handler>) -> Arc<Self> {
        let (tx, rx) = mpsc::channel::<Job>();
        let pending = Arc::new(Pending::default());
        let replies = Arc::clone(&pending);
        let mut handlers = handlers;
        std::thread::Builder::new()
            .name("local-module".into())
            .spawn(move || {
                for job in rx {
                    let started = Instant::now();
                    let reply = match handlers.get_mut(&job.capability) {
                        Some(h) => h(&job.inputs)
                            .map(|outputs| ExecOutput { outputs, elapsed_ms: started.elapsed().as_millis() as u64 })
                            .map_err(|f| ExecError::ModuleError { code: f.code, detail: f.detail }),
                        None => Err(ExecError::ModuleError {
                            code: "unknown_capability".into(),
                            detail: job.capability.clone(),
                        }),
                    };
                    replies.complete(job.id, reply);
                }
            })
            .expect("spawn local module worker");
        Arc::new(Self { connection_id: next_connection_id(), jobs: Mutex::new(Some(tx)), pending })
    }
}

impl ModuleLink for LocalModule {
    fn connection_id(&self) -> u64 {
        self.connection_id
    }

    fn execute(&self, capability: &str, inputs: Record, timeout: Duration) -> Result<ExecOutput, ExecError> {
        let (id, rx) = self.pending.open()?;
        let sent = match self.jobs.lock().as_ref() {
            Some(tx) => tx.send(Job { id, capability: capability.to_owned(), inputs }).is_ok(),
            None => false,
        };
        if !sent {
            self.pending.abandon(id);
            return Err(ExecError::NoProvider);
        }
        self.pending.wait(id, rx, timeout)
    }

    fn close(&self, _reason: &str) {
        self.jobs.lock().take();
        self.pending.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::HandlerFailure;
    use crate::wire::DataValue;

    fn echo() -> HashMap<String, Handler> {
        let mut h: HashMap<String, Handler> = HashMap::new();
        h.insert("echo".into(), Box::new(|r: &Record| Ok(r.clone())));
        h.insert("fail".into(), Box::new(|_: &Record| Err(HandlerFailure::new("handler_error", "boom"))));
        h.insert(
            "slow".into(),
            Box::new(|_: &Record| {
                std::thread::sleep(Duration::from_millis(300));
                Ok(Record::new())
            }),
        );
        h
    }

    #[test]
    fn executes_and_reports_failures() {
        let m = LocalModule::new(echo());
        let mut r = Record::new();
        r.insert("x".into(), DataValue::Int(1));
        assert_eq!(m.execute("echo", r.clone(), Duration::from_secs(1)).unwrap().outputs, r);
        assert_eq!(
            m.execute("fail", Record::new(), Duration::from_secs(1)),
            Err(ExecError::ModuleError { code: "handler_error".into(), detail: "boom".into() })
        );
        assert!(matches!(m.execute("nope", Record::new(), Duration::from_secs(1)), Err(ExecError::ModuleError { .. })));
    }

    #[test]
    fn timeout_then_close() {
        let m = LocalModule::new(echo());
        let t0 = Instant::now();
        assert_eq!(m.execute("slow", Record::new(), Duration::from_millis(100)), Err(ExecError::Timeout(100)));
        let waited = t0.elapsed();
        assert!(waited >= Duration::from_millis(100) && waited < Duration::from_millis(200), "{waited:?}");
        m.close("test");
        assert_eq!(m.execute("echo", Record::new(), Duration::from_secs(1)), Err(ExecError::NoProvider));
    }

    #[test]
    fn close_fails_in_flight_requests() {
        let m = LocalModule::new(echo());
        let m2 = Arc::clone(&m);
        let t = std::thread::spawn(move || m2.execute("slow", Record::new(), Duration::from_secs(5)));
        std::thread::sleep(Duration::from_millis(50));
        m.close("gone");
        assert_eq!(t.join().unwrap(), Err(ExecError::NoProvider));
    }
}
