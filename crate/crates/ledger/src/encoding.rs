//! Canonical deterministic encoding for consensus-relevant data.
//!
//! The encoding is compact JSON with three extra rules: map keys are
//! lexicographically sorted, byte strings render as lowercase hex strings,
//! and floats are rejected outright. Fractional quantities (sensor readings
//! and the like) must travel as scaled integers plus a unit string. The same
//! value always yields the same bytes, across processes and across runs.
//!
//! String escaping is fixed so the bytes cannot drift: `"` and `\` get a
//! backslash, the usual C0 shorthands (`\b \t \n \f \r`) apply, and any other
//! control character becomes `\u00xx` with lowercase hex. Non-ASCII text is
//! emitted as raw UTF-8, never `\u` escaped.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    /// The value contains something banned from consensus data.
    #[error("unencodable value: {0}")]
    UnencodableValue(&'static str),
}

/// Errors from decoding canonical bytes or converting values into typed
/// structures.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValueError {
    #[error("malformed json: {0}")]
    Json(String),
    #[error("integer out of range for canonical encoding")]
    IntRange,
    #[error("missing field \"{0}\"")]
    MissingField(&'static str),
    #[error("field \"{field}\": expected {expected}")]
    Expected {
        field: &'static str,
        expected: &'static str,
    },
    #[error("field \"{0}\": bad hex")]
    BadHex(&'static str),
    #[error("field \"{field}\": expected {expected} bytes")]
    BadLength {
        field: &'static str,
        expected: usize,
    },
    #[error("{0}")]
    Invalid(String),
}

/// A structured value in the canonical data model.
///
/// `Float` exists so arbitrary JSON can be represented after parsing, but it
/// can never be encoded; map keys are strings by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    pub fn bytes(b: impl Into<Vec<u8>>) -> Value {
        Value::Bytes(b.into())
    }

    pub fn map<K: Into<String>>(entries: impl IntoIterator<Item = (K, Value)>) -> Value {
        Value::Map(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn list(items: impl IntoIterator<Item = Value>) -> Value {
        Value::List(items.into_iter().collect())
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Value::Int(i) if *i >= 0 => Some(*i as u64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Value {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Value {
        Value::Int(i)
    }
}

impl From<u64> for Value {
    fn from(u: u64) -> Value {
        assert!(u <= i64::MAX as u64, "integer exceeds canonical range");
        Value::Int(u as i64)
    }
}

impl From<u32> for Value {
    fn from(u: u32) -> Value {
        Value::Int(i64::from(u))
    }
}

impl From<usize> for Value {
    fn from(u: usize) -> Value {
        assert!(u <= i64::MAX as usize, "integer exceeds canonical range");
        Value::Int(u as i64)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Value {
        Value::Str(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Value {
        Value::Str(s)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match canonical_encode(self) {
            Ok(bytes) => f.write_str(&String::from_utf8_lossy(&bytes)),
            Err(_) => f.write_str("<unencodable>"),
        }
    }
}

/// Encodes a value to its unique canonical byte sequence.
pub fn canonical_encode(value: &Value) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(128);
    write_value(&mut out, value)?;
    Ok(out)
}

fn write_value(out: &mut Vec<u8>, value: &Value) -> Result<(), EncodeError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Int(i) => out.extend_from_slice(i.to_string().as_bytes()),
        Value::Float(_) => return Err(EncodeError::UnencodableValue("float")),
        Value::Str(s) => write_string(out, s),
        Value::Bytes(b) => {
            out.push(b'"');
            out.extend_from_slice(hex::encode(b).as_bytes());
            out.push(b'"');
        }
        Value::List(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(out, item)?;
            }
            out.push(b']');
        }
        Value::Map(m) => {
            out.push(b'{');
            for (i, (k, v)) in m.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(out, k);
                out.push(b':');
                write_value(out, v)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.push(b'"');
    for ch in s.chars() {
        match ch {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\u{8}' => out.extend_from_slice(b"\\b"),
            '\t' => out.extend_from_slice(b"\\t"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\u{c}' => out.extend_from_slice(b"\\f"),
            '\r' => out.extend_from_slice(b"\\r"),
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

/// Parses JSON text into a [`Value`].
///
/// Byte strings are not self-describing in JSON, so they come back as hex
/// [`Value::Str`]; typed conversions reinterpret them. Floats parse into
/// [`Value::Float`] and will be rejected if re-encoded.
pub fn decode_value(bytes: &[u8]) -> Result<Value, ValueError> {
    let json: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| ValueError::Json(e.to_string()))?;
    from_json(&json)
}

/// Converts a parsed [`serde_json::Value`] into the canonical data model.
pub fn from_json(json: &serde_json::Value) -> Result<Value, ValueError> {
    Ok(match json {
        serde_json::Value::Null => Value::Null,
        serde_json::Value::Bool(b) => Value::Bool(*b),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::Int(i)
            } else if n.as_u64().is_some() {
                return Err(ValueError::IntRange);
            } else {
                Value::Float(n.as_f64().unwrap_or(f64::NAN))
            }
        }
        serde_json::Value::String(s) => Value::Str(s.clone()),
        serde_json::Value::Array(items) => {
            Value::List(items.iter().map(from_json).collect::<Result<_, _>>()?)
        }
        serde_json::Value::Object(entries) => {
            let mut m = BTreeMap::new();
            for (k, v) in entries {
                m.insert(k.clone(), from_json(v)?);
            }
            Value::Map(m)
        }
    })
}

/// Field accessors used by typed `from_value` conversions.
pub fn field<'a>(m: &'a BTreeMap<String, Value>, name: &'static str) -> Result<&'a Value, ValueError> {
    m.get(name).ok_or(ValueError::MissingField(name))
}

pub fn field_u64(m: &BTreeMap<String, Value>, name: &'static str) -> Result<u64, ValueError> {
    field(m, name)?.as_u64().ok_or(ValueError::Expected {
        field: name,
        expected: "non-negative integer",
    })
}

pub fn field_str<'a>(
    m: &'a BTreeMap<String, Value>,
    name: &'static str,
) -> Result<&'a str, ValueError> {
    field(m, name)?.as_str().ok_or(ValueError::Expected {
        field: name,
        expected: "string",
    })
}

pub fn field_list<'a>(
    m: &'a BTreeMap<String, Value>,
    name: &'static str,
) -> Result<&'a [Value], ValueError> {
    field(m, name)?.as_list().ok_or(ValueError::Expected {
        field: name,
        expected: "list",
    })
}

pub fn field_map<'a>(
    m: &'a BTreeMap<String, Value>,
    name: &'static str,
) -> Result<&'a BTreeMap<String, Value>, ValueError> {
    field(m, name)?.as_map().ok_or(ValueError::Expected {
        field: name,
        expected: "map",
    })
}

/// Reads a byte-string value: either [`Value::Bytes`] or a hex
/// [`Value::Str`] (how byte strings come back from JSON).
pub fn bytes_like(v: &Value, name: &'static str) -> Result<Vec<u8>, ValueError> {
    match v {
        Value::Bytes(b) => Ok(b.clone()),
        Value::Str(s) => hex::decode(s).map_err(|_| ValueError::BadHex(name)),
        _ => Err(ValueError::Expected {
            field: name,
            expected: "byte string",
        }),
    }
}

/// Decodes a byte-string field into exactly `N` bytes.
pub fn field_hex<const N: usize>(
    m: &BTreeMap<String, Value>,
    name: &'static str,
) -> Result<[u8; N], ValueError> {
    let bytes = bytes_like(field(m, name)?, name)?;
    bytes
        .try_into()
        .map_err(|_| ValueError::BadLength { field: name, expected: N })
}

pub fn hex_array<const N: usize>(s: &str, name: &'static str) -> Result<[u8; N], ValueError> {
    let bytes = hex::decode(s).map_err(|_| ValueError::BadHex(name))?;
    bytes
        .try_into()
        .map_err(|_| ValueError::BadLength { field: name, expected: N })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_is_two_ascii_bytes() {
        assert_eq!(canonical_encode(&Value::List(vec![])).unwrap(), b"[]");
    }

    #[test]
    fn map_keys_are_sorted() {
        let v = Value::map([("b", Value::Int(1)), ("a", Value::Int(2))]);
        assert_eq!(canonical_encode(&v).unwrap(), br#"{"a":2,"b":1}"#);
    }

    #[test]
    fn float_is_unencodable() {
        let v = Value::map([("x", Value::Float(1.5))]);
        assert_eq!(
            canonical_encode(&v),
            Err(EncodeError::UnencodableValue("float"))
        );
    }

    #[test]
    fn bytes_encode_as_lowercase_hex() {
        let v = Value::bytes(vec![0xDE, 0xAD, 0x00]);
        assert_eq!(canonical_encode(&v).unwrap(), br#""dead00""#);
    }

    #[test]
    fn control_chars_and_quotes_escape() {
        let v = Value::str("a\"b\\c\nd\u{1}");
        assert_eq!(
            canonical_encode(&v).unwrap(),
            b"\"a\\\"b\\\\c\\nd\\u0001\"".to_vec()
        );
    }

    #[test]
    fn decode_round_trips_through_canonical_bytes() {
        let v = Value::map([
            ("n", Value::Null),
            ("i", Value::Int(-42)),
            ("s", Value::str("héllo")),
            ("l", Value::list([Value::Bool(true), Value::Int(0)])),
        ]);
        let bytes = canonical_encode(&v).unwrap();
        let back = decode_value(&bytes).unwrap();
        assert_eq!(canonical_encode(&back).unwrap(), bytes);
    }

    #[test]
    fn oversized_integers_are_rejected_on_decode() {
        assert_eq!(
            decode_value(b"18446744073709551615"),
            Err(ValueError::IntRange)
        );
    }

    #[test]
    fn floats_survive_decode_but_not_reencode() {
        let v = decode_value(b"[1.25]").unwrap();
        assert!(matches!(v, Value::List(ref items) if matches!(items[0], Value::Float(_))));
        assert!(canonical_encode(&v).is_err());
    }
}
