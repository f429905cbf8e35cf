//! Length-prefixed frames.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AEP1" (41 45 50 31)
//! 4       1     version (1)
//! 5       2     msg_type, little-endian
//! 7       4     payload_len, little-endian
//! 11      n     payload: canonical JSON record
//! ```

use std::io::Read;

use thiserror::Error;

use super::canonical::{canonical_encode, parse, EncodeError};
use super::value::DataValue;

pub const MAGIC: [u8; 4] = *b"AEP1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 11;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

/// Default TCP port modules dial.
pub const DEFAULT_MODULE_PORT: u16 = 7410;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u16)]
pub enum MsgType {
    Register = 1,
    RegisterAck = 2,
    Heartbeat = 3,
    HeartbeatAck = 4,
    ExecuteRequest = 5,
    ExecuteResult = 6,
    ExecuteError = 7,
    Shutdown = 8,
}

impl MsgType {
    pub const ALL: [MsgType; 8] = [
        MsgType::Register,
        MsgType::RegisterAck,
        MsgType::Heartbeat,
        MsgType::HeartbeatAck,
        MsgType::ExecuteRequest,
        MsgType::ExecuteResult,
        MsgType::ExecuteError,
        MsgType::Shutdown,
    ];

    pub fn code(self) -> u16 {
        self as u16
    }
}

impl TryFrom<u16> for MsgType {
    type Error = FrameError;

    fn try_from(code: u16) -> Result<Self, FrameError> {
        MsgType::ALL.into_iter().find(|t| t.code() == code).ok_or(FrameError::UnknownMsgType(code))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("unknown message type {0}")]
    UnknownMsgType(u16),
    #[error("payload of {0} octets exceeds the 16 MiB cap")]
    PayloadTooLarge(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("incomplete frame: need {needed} more octets")]
    IncompleteFrame { needed: usize },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// Encodes one frame. The payload must be a record.
pub fn encode_frame(msg_type: u16, payload: &DataValue) -> Result<Vec<u8>, FrameError> {
    MsgType::try_from(msg_type)?;
    if !matches!(payload, DataValue::Record(_)) {
        return Err(FrameError::MalformedPayload("payload must be a record".into()));
    }
    let body = canonical_encode(payload)?;
    if body.len() > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&msg_type.to_le_bytes());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Decodes exactly one frame from the front of `input`.
///
/// Returns the message type, the payload record and the untouched remainder.
pub fn decode_frame(input: &[u8]) -> Result<(MsgType, DataValue, &[u8]), FrameError> {
    let (msg_type, len) = decode_header(input)?;
    let total = HEADER_LEN + len;
    if input.len() < total {
        return Err(FrameError::IncompleteFrame { needed: total - input.len() });
    }
    let payload = parse(&input[HEADER_LEN..total]).map_err(|e| FrameError::MalformedPayload(e.to_string()))?;
    if !matches!(payload, DataValue::Record(_)) {
        return Err(FrameError::MalformedPayload("payload is not a record".into()));
    }
    Ok((msg_type, payload, &input[total..]))
}

/// Validates the header and returns (type, payload length).
fn decode_header(input: &[u8]) -> Result<(MsgType, usize), FrameError> {
    let magic_seen = input.len().min(MAGIC.len());
    if input[..magic_seen] != MAGIC[..magic_seen] {
        return Err(FrameError::BadMagic);
    }
    if input.len() < HEADER_LEN {
        return Err(FrameError::IncompleteFrame { needed: HEADER_LEN - input.len() });
    }
    if input[4] != VERSION {
        return Err(FrameError::UnsupportedVersion(input[4]));
    }
    let msg_type = MsgType::try_from(u16::from_le_bytes([input[5], input[6]]))?;
    let len = u32::from_le_bytes([input[7], input[8], input[9], input[10]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(len));
    }
    Ok((msg_type, len))
}

/// Reads whole frames from a byte stream.
#[derive(Debug)]
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Frame(FrameError),
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, buf: Vec::new() }
    }

    /// Blocks until one full frame is available.
    pub fn read_frame(&mut self) -> Result<(MsgType, DataValue), ReadError> {
        loop {
            match decode_frame(&self.buf) {
                Ok((t, payload, rest)) => {
                    let consumed = self.buf.len() - rest.len();
                    self.buf.drain(..consumed);
                    return Ok((t, payload));
                }
                Err(FrameError::IncompleteFrame { needed }) => {
                    let mut chunk = vec![0u8; needed.clamp(1, 64 * 1024)];
                    let n = self.inner.read(&mut chunk)?;
                    if n == 0 {
                        return Err(ReadError::Closed);
                    }
                    self.buf.extend_from_slice(&chunk[..n]);
                }
                Err(e) => return Err(ReadError::Frame(e)),
            }
        }
    }
}
