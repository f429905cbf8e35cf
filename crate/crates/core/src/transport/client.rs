//! Module side of the protocol, for hosting capabilities written in Rust.

use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{Shutdown as SocketShutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;

use super::Handler;
use crate::registry::ModuleId;
use crate::wire::{
    ExecuteError, ExecuteResult, FrameError, FrameReader, Heartbeat, Message, ModuleDescriptor, ReadError, Register,
    ReportedStatus, Shutdown, Violation,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("registration rejected: {0:?}")]
    RegistrationRejected(Vec<Violation>),
    #[error("unexpected reply to REGISTER")]
    UnexpectedReply,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Read(#[from] ReadError),
}

/// A registered module serving its handlers on background threads.
pub struct ModuleClient {
    module_id: ModuleId,
    writer: Arc<Mutex<TcpStream>>,
    stop: Arc<AtomicBool>,
    heartbeats: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

fn send(writer: &Mutex<TcpStream>, msg: &Message) -> io::Result<()> {
    let bytes = msg.encode().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let mut w = writer.lock();
    w.write_all(&bytes)?;
    w.flush()
}

impl ModuleClient {
    /// Dials the core, registers, and starts heartbeating and dispatching.
    pub fn connect(
        addr: impl ToSocketAddrs,
        descriptor: ModuleDescriptor,
        mut handlers: HashMap<String, Handler>,
    ) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let writer = Arc::new(Mutex::new(stream.try_clone()?));
        let mut reader = FrameReader::new(stream);
        let interval = Duration::from_millis(descriptor.heartbeat_interval_ms.max(1));
        send(&writer, &Message::Register(Register { descriptor }))?;
        let (t, payload) = reader.read_frame()?;
        let module_id = match Message::from_payload(t, &payload)? {
            Message::RegisterAck(ack) if ack.ok => {
                ack.module_id.and_then(|id| id.parse::<ModuleId>().ok()).ok_or(ClientError::UnexpectedReply)?
            }
            Message::RegisterAck(ack) => {
                return Err(ClientError::RegistrationRejected(ack.violations.unwrap_or_default()))
            }
            _ => return Err(ClientError::UnexpectedReply),
        };

        let stop = Arc::new(AtomicBool::new(false));
        let heartbeats = Arc::new(AtomicBool::new(true));

        let beat = {
            let (writer, stop, heartbeats) = (Arc::clone(&writer), Arc::clone(&stop), Arc::clone(&heartbeats));
            std::thread::spawn(move || {
                let mut next = Instant::now() + interval;
                while !stop.load(Ordering::SeqCst) {
                    let now = Instant::now();
                    if now < next {
                        std::thread::sleep((next - now).min(Duration::from_millis(20)));
                        continue;
                    }
                    next += interval;
                    if heartbeats.load(Ordering::SeqCst) {
                        let hb = Heartbeat { module_id: module_id.to_string(), status: ReportedStatus::Ready };
                        if send(&writer, &Message::Heartbeat(hb)).is_err() {
                            break;
                        }
                    }
                }
            })
        };

        let dispatch = {
            let (writer, stop) = (Arc::clone(&writer), Arc::clone(&stop));
            std::thread::spawn(move || {
                while let Ok((t, payload)) = reader.read_frame() {
                    let reply = match Message::from_payload(t, &payload) {
                        Ok(Message::ExecuteRequest(req)) => {
                            let started = Instant::now();
                            match handlers.get_mut(&req.capability) {
                                Some(h) => match h(&req.inputs) {
                                    Ok(outputs) => Message::ExecuteResult(ExecuteResult {
                                        request_id: req.request_id,
                                        outputs,
                                        elapsed_ms: started.elapsed().as_millis() as u64,
                                    }),
                                    Err(f) => Message::ExecuteError(ExecuteError {
                                        request_id: req.request_id,
                                        code: f.code,
                                        detail: f.detail,
                                    }),
                                },
                                None => Message::ExecuteError(ExecuteError {
                                    request_id: req.request_id,
                                    code: "unknown_capability".into(),
                                    detail: req.capability,
                                }),
                            }
                        }
                        Ok(Message::Shutdown(_)) => break,
                        _ => continue,
                    };
                    if send(&writer, &reply).is_err() {
                        break;
                    }
                }
                stop.store(true, Ordering::SeqCst);
            })
        };

        Ok(Self { module_id, writer, stop, heartbeats, threads: vec![beat, dispatch] })
    }

    pub fn module_id(&self) -> ModuleId {
        self.module_id
    }

    /// Stops sending heartbeats while keeping the connection open.
    pub fn pause_heartbeats(&self) {
        self.heartbeats.store(false, Ordering::SeqCst);
    }

    pub fn resume_heartbeats(&self) {
        self.heartbeats.store(true, Ordering::SeqCst);
    }

    pub fn is_running(&self) -> bool {
        !self.stop.load(Ordering::SeqCst)
    }

    /// Sends SHUTDOWN and closes the connection.
    pub fn shutdown(mut self, reason: &str) {
        let _ = send(&self.writer, &Message::Shutdown(Shutdown { reason: reason.to_owned() }));
        self.teardown();
    }

    /// Drops the connection without saying goodbye.
    pub fn disconnect(mut self) {
        self.teardown();
    }

    fn teardown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.writer.lock().shutdown(SocketShutdown::Both);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ModuleClient {
    fn drop(&mut self) {
        self.teardown();
    }
}
