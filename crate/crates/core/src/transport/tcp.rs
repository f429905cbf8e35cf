//! Core side of module connections: one TCP stream per module, registration
//! as the first frame, then heartbeats and request/response traffic.

use std::io::{self, Write};
use std::net::{Shutdown as SocketShutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::Mutex;

use super::{next_connection_id, Pending};
use crate::registry::{ExecError, ExecOutput, ModuleId, ModuleLink, Registry, RegistryError};
use crate::wire::{
    from_data, ExecuteRequest, FrameError, FrameReader, Message, ModuleDescriptor, MsgType, ReadError, RegisterAck,
    Shutdown, Violation, ViolationCode,
};

/// Request channel to one module over its TCP connection.
pub struct TcpLink {
    connection_id: u64,
    writer: Mutex<TcpStream>,
    pending: Pending,
    shut: AtomicBool,
}

impl TcpLink {
    fn new(connection_id: u64, stream: TcpStream) -> Self {
        Self { connection_id, writer: Mutex::new(stream), pending: Pending::default(), shut: AtomicBool::new(false) }
    }

    fn send(&self, msg: &Message) -> io::Result<()> {
        let bytes = msg.encode().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let mut w = self.writer.lock();
        w.write_all(&bytes)?;
        w.flush()
    }
}

impl ModuleLink for TcpLink {
    fn connection_id(&self) -> u64 {
        self.connection_id
    }

    fn execute(
        &self,
        capability: &str,
        inputs: crate::wire::Record,
        timeout: Duration,
    ) -> Result<ExecOutput, ExecError> {
        let (id, rx) = self.pending.open()?;
        let req = Message::ExecuteRequest(ExecuteRequest { request_id: id, capability: capability.to_owned(), inputs });
        if let Err(e) = self.send(&req) {
            log::warn!("connection {}: request {id} not sent: {e}", self.connection_id);
            self.pending.abandon(id);
            return Err(ExecError::NoProvider);
        }
        self.pending.wait(id, rx, timeout)
    }

    fn close(&self, reason: &str) {
        if self.shut.swap(true, Ordering::SeqCst) {
            return;
        }
        self.pending.close();
        let _ = self.send(&Message::Shutdown(Shutdown { reason: reason.to_owned() }));
        let _ = self.writer.lock().shutdown(SocketShutdown::Both);
    }
}

/// Accepts module connections and feeds them into a [`Registry`].
pub struct ModuleListener {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ModuleListener {
    pub fn bind(addr: impl ToSocketAddrs, registry: Arc<Registry>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::Builder::new().name("module-listener".into()).spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        let registry = Arc::clone(&registry);
                        let spawned = std::thread::Builder::new()
                            .name("module-conn".into())
                            .spawn(move || serve_connection(s, registry));
                        if let Err(e) = spawned {
                            log::error!("cannot spawn connection thread: {e}");
                        }
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?;
        Ok(Self { addr, stop, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ModuleListener {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn reject(link: &TcpLink, violations: Vec<Violation>) {
    let ack = Message::RegisterAck(RegisterAck { module_id: None, ok: false, violations: Some(violations) });
    let _ = link.send(&ack);
    link.close("registration rejected");
}

fn serve_connection(stream: TcpStream, registry: Arc<Registry>) {
    let _ = stream.set_nodelay(true);
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let reader_stream = match stream.try_clone() {
        Ok(s) => s,
        Err(e) => {
            log::warn!("{peer}: cannot clone stream: {e}");
            return;
        }
    };
    let connection_id = next_connection_id();
    let link = Arc::new(TcpLink::new(connection_id, stream));
    let mut reader = FrameReader::new(reader_stream);

    let descriptor = match reader.read_frame() {
        Ok((MsgType::Register, payload)) => {
            let inner = payload.as_record().and_then(|r| r.get("descriptor")).cloned().unwrap_or_default();
            match from_data::<ModuleDescriptor>(&inner) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("{peer}: malformed descriptor: {e}");
                    return reject(&link, vec![Violation::new(ViolationCode::Malformed, "descriptor")]);
                }
            }
        }
        Ok((t, _)) => {
            log::warn!("{peer}: first frame was {t:?}, expected REGISTER");
            return reject(&link, vec![Violation::new(ViolationCode::Malformed, "descriptor")]);
        }
        Err(e) => {
            log::debug!("{peer}: closed before registering: {e}");
            return link.close("no registration");
        }
    };

    let module_id = match registry.register(descriptor, link.clone()) {
        Ok(id) => id,
        Err(RegistryError::InvalidDescriptor(v)) => return reject(&link, v),
        Err(RegistryError::DuplicateName(_)) => {
            return reject(&link, vec![Violation::new(ViolationCode::DuplicateName, "module_name")])
        }
        Err(e) => {
            log::error!("{peer}: registration failed: {e}");
            return link.close("registration failed");
        }
    };
    let ack = RegisterAck { module_id: Some(module_id.to_string()), ok: true, violations: None };
    if link.send(&Message::RegisterAck(ack)).is_err() {
        registry.connection_closed(connection_id);
        return;
    }
    log::info!("{peer}: registered as {module_id}");

    loop {
        let (t, payload) = match reader.read_frame() {
            Ok(f) => f,
            Err(ReadError::Frame(FrameError::MalformedPayload(e))) => {
                log::warn!("{module_id}: malformed payload: {e}");
                registry.mark_faulted(module_id);
                continue;
            }
            Err(ReadError::Closed) => break,
            Err(e) => {
                log::warn!("{module_id}: connection error: {e}");
                break;
            }
        };
        let msg = match Message::from_payload(t, &payload) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("{module_id}: bad {t:?} payload: {e}");
                registry.mark_faulted(module_id);
                continue;
            }
        };
        if !handle_message(msg, module_id, &link, &registry) {
            break;
        }
    }
    registry.connection_closed(connection_id);
    link.close("connection closed");
}

/// Returns false when the connection should end.
fn handle_message(msg: Message, module_id: ModuleId, link: &TcpLink, registry: &Registry) -> bool {
    match msg {
        Message::Heartbeat(hb) => {
            if hb.module_id != module_id.to_string() {
                log::warn!("{module_id}: heartbeat names {}", hb.module_id);
                registry.mark_faulted(module_id);
                return true;
            }
            if registry.heartbeat(module_id, hb.status).is_err() {
                return false;
            }
            link.send(&Message::HeartbeatAck).is_ok()
        }
        Message::ExecuteResult(r) => {
            let reply = Ok(ExecOutput { outputs: r.outputs, elapsed_ms: r.elapsed_ms });
            if !link.pending.complete(r.request_id, reply) {
                log::warn!("{module_id}: result for unknown request {}", r.request_id);
                registry.mark_faulted(module_id);
            }
            true
        }
        Message::ExecuteError(e) => {
            let reply = Err(ExecError::ModuleError { code: e.code, detail: e.detail });
            if !link.pending.complete(e.request_id, reply) {
                log::warn!("{module_id}: error for unknown request {}", e.request_id);
                registry.mark_faulted(module_id);
            }
            true
        }
        Message::Shutdown(s) => {
            log::info!("{module_id}: shutting down: {}", s.reason);
            false
        }
        other => {
            log::warn!("{module_id}: unexpected {:?}", other.msg_type());
            registry.mark_faulted(module_id);
            !link.pending.is_closed()
        }
    }
}
