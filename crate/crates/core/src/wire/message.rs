//! Typed payloads for each frame type.

use serde::{Deserialize, Serialize};

use super::frame::{decode_frame, encode_frame, FrameError, MsgType};
use super::schema::{ModuleDescriptor, Violation};
use super::value::{from_data, to_data, DataValue, Record};

/// Status a module reports in its heartbeats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReportedStatus {
    Ready,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Register {
    pub descriptor: ModuleDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterAck {
    pub module_id: Option<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<Violation>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub module_id: String,
    pub status: ReportedStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub request_id: u64,
    pub capability: String,
    pub inputs: Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteResult {
    pub request_id: u64,
    pub outputs: Record,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecuteError {
    pub request_id: u64,
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shutdown {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Register(Register),
    RegisterAck(RegisterAck),
    Heartbeat(Heartbeat),
    HeartbeatAck,
    ExecuteRequest(ExecuteRequest),
    ExecuteResult(ExecuteResult),
    ExecuteError(ExecuteError),
    Shutdown(Shutdown),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Register(_) => MsgType::Register,
            Message::RegisterAck(_) => MsgType::RegisterAck,
            Message::Heartbeat(_) => MsgType::Heartbeat,
            Message::HeartbeatAck => MsgType::HeartbeatAck,
            Message::ExecuteRequest(_) => MsgType::ExecuteRequest,
            Message::ExecuteResult(_) => MsgType::ExecuteResult,
            Message::ExecuteError(_) => MsgType::ExecuteError,
            Message::Shutdown(_) => MsgType::Shutdown,
        }
    }

    pub fn payload(&self) -> Result<DataValue, FrameError> {
        let v = match self {
            Message::Register(m) => to_data(m),
            Message::RegisterAck(m) => to_data(m),
            Message::Heartbeat(m) => to_data(m),
            Message::HeartbeatAck => Ok(DataValue::empty_record()),
            Message::ExecuteRequest(m) => to_data(m),
            Message::ExecuteResult(m) => to_data(m),
            Message::ExecuteError(m) => to_data(m),
            Message::Shutdown(m) => to_data(m),
        };
        v.map_err(|e| FrameError::MalformedPayload(e.to_string()))
    }

    /// Interprets a decoded payload according to its frame type.
    pub fn from_payload(msg_type: MsgType, payload: &DataValue) -> Result<Message, FrameError> {
        fn get<T: serde::de::DeserializeOwned>(p: &DataValue) -> Result<T, FrameError> {
            from_data(p).map_err(|e| FrameError::MalformedPayload(e.to_string()))
        }
        Ok(match msg_type {
            MsgType::Register => Message::Register(get(payload)?),
            MsgType::RegisterAck => Message::RegisterAck(get(payload)?),
            MsgType::Heartbeat => Message::Heartbeat(get(payload)?),
            MsgType::HeartbeatAck => Message::HeartbeatAck,
            MsgType::ExecuteRequest => Message::ExecuteRequest(get(payload)?),
            MsgType::ExecuteResult => Message::ExecuteResult(get(payload)?),
            MsgType::ExecuteError => Message::ExecuteError(get(payload)?),
            MsgType::Shutdown => Message::Shutdown(get(payload)?),
        })
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        encode_frame(self.msg_type().code(), &self.payload()?)
    }

    /// Decodes one message, returning the unread remainder.
    pub fn decode(input: &[u8]) -> Result<(Message, &[u8]), FrameError> {
        let (t, payload, rest) = decode_frame(input)?;
        Ok((Message::from_payload(t, &payload)?, rest))
    }
}
