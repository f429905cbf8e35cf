//! Canonical JSON encoding of [`DataValue`] and a strict parser for it.
//!
//! Canonical form: record keys in byte order, no insignificant whitespace,
//! integers in base 10, reals in the shortest decimal that round-trips
//! binary64 (always carrying a `.` or an exponent so they never read back as
//! integers), and octets as `{"$bytes":"<base64>"}`.

use base64::Engine as _;
use thiserror::Error;

use super::value::{unwrap_bytes, DataValue, Record, BYTES_KEY, MAX_DEPTH};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("real value is NaN or infinite")]
    NonFiniteReal,
    #[error("nesting depth exceeds {MAX_DEPTH}")]
    DepthExceeded,
    #[error("record key {BYTES_KEY:?} is reserved")]
    ReservedKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed JSON at offset {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

/// Encodes `value` to canonical octets.
pub fn canonical_encode(value: &DataValue) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(64);
    write_value(value, 0, &mut out)?;
    Ok(out)
}

/// Canonical text form; convenience over [`canonical_encode`].
pub fn canonical_string(value: &DataValue) -> Result<String, EncodeError> {
    // The encoder only ever emits UTF-8.
    canonical_encode(value).map(|b| String::from_utf8(b).expect("canonical output is UTF-8"))
}

/// Shortest round-trip decimal for a finite real.
pub fn format_real(r: f64) -> String {
    let mut buf = ryu::Buffer::new();
    buf.format_finite(r).to_owned()
}

fn write_value(value: &DataValue, depth: usize, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    match value {
        DataValue::Null => out.extend_from_slice(b"null"),
        DataValue::Bool(true) => out.extend_from_slice(b"true"),
        DataValue::Bool(false) => out.extend_from_slice(b"false"),
        DataValue::Int(i) => out.extend_from_slice(i.to_string().as_bytes()),
        DataValue::Real(r) => {
            if !r.is_finite() {
                return Err(EncodeError::NonFiniteReal);
            }
            out.extend_from_slice(format_real(*r).as_bytes());
        }
        DataValue::Text(s) => write_string(s, out),
        DataValue::Bytes(b) => {
            out.extend_from_slice(b"{\"$bytes\":\"");
            out.extend_from_slice(base64::engine::general_purpose::STANDARD.encode(b).as_bytes());
            out.extend_from_slice(b"\"}");
        }
        DataValue::List(items) => {
            if depth + 1 > MAX_DEPTH {
                return Err(EncodeError::DepthExceeded);
            }
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, depth + 1, out)?;
            }
            out.push(b']');
        }
        DataValue::Record(map) => {
            if depth + 1 > MAX_DEPTH {
                return Err(EncodeError::DepthExceeded);
            }
            if map.contains_key(BYTES_KEY) {
                return Err(EncodeError::ReservedKey);
            }
            // BTreeMap<String, _> iterates in byte order of the keys.
            out.push(b'{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(k, out);
                out.push(b':');
                write_value(v, depth + 1, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    out.push(b'"');
    for ch in s.chars() {
        match ch {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\u{08}' => out.extend_from_slice(b"\\b"),
            '\u{0C}' => out.extend_from_slice(b"\\f"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\r' => out.extend_from_slice(b"\\r"),
            '\t' => out.extend_from_slice(b"\\t"),
            c if (c as u32) < 0x20 => {
                out.extend_from_slice(format!("\\u{:04x}", c as u32).as_bytes());
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    out.push(b'"');
}

/// Parses JSON octets into a [`DataValue`].
///
/// Accepts any standard JSON (whitespace included) but rejects duplicate
/// keys, non-finite or out-of-range numbers, nesting deeper than
/// [`MAX_DEPTH`], and misuse of the reserved bytes key.
pub fn parse(input: &[u8]) -> Result<DataValue, ParseError> {
    let text = std::str::from_utf8(input)
        .map_err(|e| ParseError { offset: e.valid_up_to(), reason: "invalid UTF-8".into() })?;
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    let v = p.value(0)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing characters"));
    }
    Ok(v)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, reason: impl Into<String>) -> ParseError {
        ParseError { offset: self.pos, reason: reason.into() }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, lit: &[u8]) -> Result<(), ParseError> {
        if self.src[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err(format!("expected {}", String::from_utf8_lossy(lit))))
        }
    }

    /// `depth` is the number of enclosing containers.
    fn value(&mut self, depth: usize) -> Result<DataValue, ParseError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'n') => self.expect(b"null").map(|_| DataValue::Null),
            Some(b't') => self.expect(b"true").map(|_| DataValue::Bool(true)),
            Some(b'f') => self.expect(b"false").map(|_| DataValue::Bool(false)),
            Some(b'"') => self.string().map(DataValue::Text),
            Some(b'[') => self.list(depth),
            Some(b'{') => self.object(depth),
            Some(b'-' | b'0'..=b'9') => self.number(),
            Some(c) => Err(self.err(format!("unexpected character {:?}", c as char))),
        }
    }

    fn list(&mut self, depth: usize) -> Result<DataValue, ParseError> {
        let level = depth + 1;
        if level > MAX_DEPTH {
            return Err(self.err("nesting depth exceeded"));
        }
        self.pos += 1;
        let mut items = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(DataValue::List(items));
        }
        loop {
            self.skip_ws();
            items.push(self.value(level)?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(DataValue::List(items));
                }
                _ => return Err(self.err("expected ',' or ']'")),
            }
        }
    }

    fn object(&mut self, depth: usize) -> Result<DataValue, ParseError> {
        let start = self.pos;
        let level = depth + 1;
        // A bytes wrapper is a leaf, so allow one level of slack for it and
        // check plain records after the fact.
        if level > MAX_DEPTH + 1 {
            return Err(self.err("nesting depth exceeded"));
        }
        self.pos += 1;
        let mut map = Record::new();
        self.skip_ws();
        if self.peek() == Some(b'}') {
            self.pos += 1;
        } else {
            loop {
                self.skip_ws();
                if self.peek() != Some(b'"') {
                    return Err(self.err("expected record key"));
                }
                let key_at = self.pos;
                let key = self.string()?;
                self.skip_ws();
                self.expect(b":")?;
                self.skip_ws();
                let v = self.value(level)?;
                if map.insert(key, v).is_some() {
                    return Err(ParseError { offset: key_at, reason: "duplicate record key".into() });
                }
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b'}') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected ',' or '}'")),
                }
            }
        }
        let v = unwrap_bytes(map).map_err(|reason| ParseError { offset: start, reason })?;
        if matches!(v, DataValue::Record(_)) && level > MAX_DEPTH {
            return Err(ParseError { offset: start, reason: "nesting depth exceeded".into() });
        }
        Ok(v)
    }

    fn number(&mut self) -> Result<DataValue, ParseError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        match self.peek() {
            Some(b'0') => self.pos += 1,
            Some(b'1'..=b'9') => self.digits(),
            _ => return Err(self.err("invalid number")),
        }
        let mut real = false;
        if self.peek() == Some(b'.') {
            real = true;
            self.pos += 1;
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.err("expected digit after '.'"));
            }
            self.digits();
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            real = true;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if !matches!(self.peek(), Some(b'0'..=b'9')) {
                return Err(self.err("expected exponent digits"));
            }
            self.digits();
        }
        // Only ASCII was consumed.
        let lexeme = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if real {
            match lexeme.parse::<f64>() {
                Ok(r) if r.is_finite() => Ok(DataValue::Real(r)),
                _ => Err(ParseError { offset: start, reason: "real out of range".into() }),
            }
        } else {
            lexeme
                .parse::<i64>()
                .map(DataValue::Int)
                .map_err(|_| ParseError { offset: start, reason: "integer out of 64-bit range".into() })
        }
    }

    fn digits(&mut self) {
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
    }

    fn hex4(&mut self) -> Result<u32, ParseError> {
        let end = self.pos + 4;
        if end > self.src.len() {
            return Err(self.err("truncated \\u escape"));
        }
        let s = std::str::from_utf8(&self.src[self.pos..end]).map_err(|_| self.err("bad \\u escape"))?;
        let v = u32::from_str_radix(s, 16).map_err(|_| self.err("bad \\u escape"))?;
        self.pos = end;
        Ok(v)
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            let run_start = self.pos;
            while let Some(c) = self.peek() {
                if c == b'"' || c == b'\\' || c < 0x20 {
                    break;
                }
                self.pos += 1;
            }
            // Input was validated as UTF-8 and runs stop only at ASCII.
            out.push_str(std::str::from_utf8(&self.src[run_start..self.pos]).expect("utf-8"));
            match self.peek() {
                None => return Err(self.err("unterminated string")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    self.pos += 1;
                    let esc = self.peek().ok_or_else(|| self.err("unterminated escape"))?;
                    self.pos += 1;
                    match esc {
                        b'"' => out.push('"'),
                        b'\\' => out.push('\\'),
                        b'/' => out.push('/'),
                        b'b' => out.push('\u{08}'),
                        b'f' => out.push('\u{0C}'),
                        b'n' => out.push('\n'),
                        b'r' => out.push('\r'),
                        b't' => out.push('\t'),
                        b'u' => {
                            let hi = self.hex4()?;
                            let code = if (0xD800..0xDC00).contains(&hi) {
                                self.expect(b"\\u")?;
                                let lo = self.hex4()?;
                                if !(0xDC00..0xE000).contains(&lo) {
                                    return Err(self.err("unpaired surrogate"));
                                }
                                0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00)
                            } else {
                                hi
                            };
                            let ch = char::from_u32(code).ok_or_else(|| self.err("invalid code point"))?;
                            out.push(ch);
                        }
                        _ => return Err(self.err("invalid escape")),
                    }
                }
                Some(_) => return Err(self.err("control character in string")),
            }
        }
    }
}
