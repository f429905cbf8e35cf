//! Framed, language-agnostic protocol spoken between the core and modules.

mod canonical;
mod frame;
mod message;
mod schema;
mod value;

pub use canonical::{canonical_encode, canonical_string, format_real, parse, EncodeError, ParseError};
pub use frame::{
    decode_frame, encode_frame, FrameError, FrameReader, MsgType, ReadError, DEFAULT_MODULE_PORT, HEADER_LEN, MAGIC,
    MAX_PAYLOAD, VERSION,
};
pub use message::{
    ExecuteError, ExecuteRequest, ExecuteResult, Heartbeat, Message, Register, RegisterAck, ReportedStatus, Shutdown,
};
pub use schema::{
    coerce_record, coerce_value, is_identifier, validate_capability, validate_descriptor, validate_parameter,
    CapabilitySchema, CoerceError, ModuleDescriptor, ParamKind, ParameterSpec, Role, Violation, ViolationCode,
    MAX_HEARTBEAT_MS, MIN_HEARTBEAT_MS,
};
pub use value::{from_data, to_data, DataValue, Record, BYTES_KEY, MAX_DEPTH};
