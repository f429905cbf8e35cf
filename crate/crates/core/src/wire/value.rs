//! The tagged value carried in every payload exchanged with modules.

use std::collections::BTreeMap;
use std::fmt;

use base64::Engine as _;
use serde::de::{self, MapAccess, SeqAccess, Visitor};
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Maximum container nesting accepted on the wire.
pub const MAX_DEPTH: usize = 32;

/// Reserved record key used to carry opaque octets through JSON.
pub const BYTES_KEY: &str = "$bytes";

/// Text-keyed map of values. Keys are kept in byte order.
pub type Record = BTreeMap<String, DataValue>;

#[derive(Debug, Clone, PartialEq, Default)]
pub enum DataValue {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
    Bytes(Vec<u8>),
    List(Vec<DataValue>),
    Record(Record),
}

impl DataValue {
    pub fn record<K, I>(entries: I) -> Self
    where
        K: Into<String>,
        I: IntoIterator<Item = (K, DataValue)>,
    {
        DataValue::Record(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn empty_record() -> Self {
        DataValue::Record(Record::new())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DataValue::Null => "null",
            DataValue::Bool(_) => "boolean",
            DataValue::Int(_) => "integer",
            DataValue::Real(_) => "real",
            DataValue::Text(_) => "text",
            DataValue::Bytes(_) => "bytes",
            DataValue::List(_) => "list",
            DataValue::Record(_) => "record",
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, DataValue::Null)
    }

    pub fn as_record(&self) -> Option<&Record> {
        match self {
            DataValue::Record(r) => Some(r),
            _ => None,
        }
    }

    pub fn into_record(self) -> Option<Record> {
        match self {
            DataValue::Record(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            DataValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            DataValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Numeric view: integers widen to reals.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            DataValue::Int(i) => Some(*i as f64),
            DataValue::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            DataValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[DataValue]> {
        match self {
            DataValue::List(l) => Some(l),
            _ => None,
        }
    }

    /// Container depth: scalars are 0, a flat record or list is 1.
    pub fn depth(&self) -> usize {
        match self {
            DataValue::List(items) => 1 + items.iter().map(DataValue::depth).max().unwrap_or(0),
            DataValue::Record(map) => 1 + map.values().map(DataValue::depth).max().unwrap_or(0),
            _ => 0,
        }
    }
}

impl From<bool> for DataValue {
    fn from(v: bool) -> Self {
        DataValue::Bool(v)
    }
}

impl From<i64> for DataValue {
    fn from(v: i64) -> Self {
        DataValue::Int(v)
    }
}

impl From<f64> for DataValue {
    fn from(v: f64) -> Self {
        DataValue::Real(v)
    }
}

impl From<&str> for DataValue {
    fn from(v: &str) -> Self {
        DataValue::Text(v.to_owned())
    }
}

impl From<String> for DataValue {
    fn from(v: String) -> Self {
        DataValue::Text(v)
    }
}

impl From<Record> for DataValue {
    fn from(v: Record) -> Self {
        DataValue::Record(v)
    }
}

impl From<Vec<DataValue>> for DataValue {
    fn from(v: Vec<DataValue>) -> Self {
        DataValue::List(v)
    }
}

impl Serialize for DataValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            DataValue::Null => serializer.serialize_unit(),
            DataValue::Bool(b) => serializer.serialize_bool(*b),
            DataValue::Int(i) => serializer.serialize_i64(*i),
            DataValue::Real(r) => serializer.serialize_f64(*r),
            DataValue::Text(s) => serializer.serialize_str(s),
            DataValue::Bytes(b) => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry(BYTES_KEY, &base64::engine::general_purpose::STANDARD.encode(b))?;
                map.end()
            }
            DataValue::List(items) => {
                let mut seq = serializer.serialize_seq(Some(items.len()))?;
                for item in items {
                    seq.serialize_element(item)?;
                }
                seq.end()
            }
            DataValue::Record(map) => {
                let mut out = serializer.serialize_map(Some(map.len()))?;
                for (k, v) in map {
                    out.serialize_entry(k, v)?;
                }
                out.end()
            }
        }
    }
}

struct DataValueVisitor;

impl<'de> Visitor<'de> for DataValueVisitor {
    type Value = DataValue;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a data value")
    }

    fn visit_unit<E>(self) -> Result<DataValue, E> {
        Ok(DataValue::Null)
    }

    fn visit_none<E>(self) -> Result<DataValue, E> {
        Ok(DataValue::Null)
    }

    fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<DataValue, D::Error> {
        DataValue::deserialize(d)
    }

    fn visit_bool<E>(self, v: bool) -> Result<DataValue, E> {
        Ok(DataValue::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> Result<DataValue, E> {
        Ok(DataValue::Int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<DataValue, E> {
        i64::try_from(v).map(DataValue::Int).map_err(|_| E::custom("integer exceeds signed 64-bit range"))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<DataValue, E> {
        if v.is_finite() {
            Ok(DataValue::Real(v))
        } else {
            Err(E::custom("non-finite real"))
        }
    }

    fn visit_str<E>(self, v: &str) -> Result<DataValue, E> {
        Ok(DataValue::Text(v.to_owned()))
    }

    fn visit_string<E>(self, v: String) -> Result<DataValue, E> {
        Ok(DataValue::Text(v))
    }

    fn visit_bytes<E>(self, v: &[u8]) -> Result<DataValue, E> {
        Ok(DataValue::Bytes(v.to_vec()))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<DataValue, A::Error> {
        let mut items = Vec::with_capacity(seq.size_hint().unwrap_or(0).min(1024));
        while let Some(item) = seq.next_element()? {
            items.push(item);
        }
        Ok(DataValue::List(items))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<DataValue, A::Error> {
        let mut map = Record::new();
        while let Some((k, v)) = access.next_entry::<String, DataValue>()? {
            if map.insert(k, v).is_some() {
                return Err(de::Error::custom("duplicate record key"));
            }
        }
        unwrap_bytes(map).map_err(de::Error::custom)
    }
}

/// Turns a `{"$bytes": "<base64>"}` record into `Bytes`; other records pass through.
pub(crate) fn unwrap_bytes(map: Record) -> Result<DataValue, String> {
    if !map.contains_key(BYTES_KEY) {
        return Ok(DataValue::Record(map));
    }
    match (map.len(), map.get(BYTES_KEY)) {
        (1, Some(DataValue::Text(b64))) => base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map(DataValue::Bytes)
            .map_err(|e| format!("invalid base64 under {BYTES_KEY}: {e}")),
        _ => Err(format!("reserved key {BYTES_KEY} used outside a bytes wrapper")),
    }
}

impl<'de> Deserialize<'de> for DataValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<DataValue, D::Error> {
        d.deserialize_any(DataValueVisitor)
    }
}

/// Converts any serializable domain type into a [`DataValue`].
pub fn to_data<T: Serialize + ?Sized>(value: &T) -> Result<DataValue, serde_json::Error> {
    let json = serde_json::to_value(value)?;
    DataValue::deserialize(json)
}

/// Reads a domain type back out of a [`DataValue`].
pub fn from_data<T: serde::de::DeserializeOwned>(value: &DataValue) -> Result<T, serde_json::Error> {
    let json = serde_json::to_value(value)?;
    T::deserialize(json)
}
