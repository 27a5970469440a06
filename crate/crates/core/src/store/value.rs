//! Value serialization for the `value` / `value_type` record columns.
//!
//! Type codes: 1 int, 2 float, 3 inline text, 4 blob reference. Text larger
//! than [`INLINE_TEXT_LIMIT`] bytes and all byte strings go to the
//! content-addressed object store; the record then carries the blob hash.

use crate::error::{FlorError, Result};

pub const TYPE_INT: i64 = 1;
pub const TYPE_FLOAT: i64 = 2;
pub const TYPE_TEXT: i64 = 3;
pub const TYPE_BLOB: i64 = 4;

/// Inline threshold for text payloads, in bytes.
pub const INLINE_TEXT_LIMIT: usize = 4096;

/// A typed value before encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Int(i64),
    Float(f64),
    Text(String),
    Bytes(Vec<u8>),
}

/// Encoded form: blob payloads still need `put_blob`, which is why encoding
/// is finished by [`crate::store::Store::encode_value`].
pub(crate) enum Encoded {
    Inline(i64, String),
    Blob(Vec<u8>),
}

pub(crate) fn encode(raw: RawValue) -> Encoded {
    match raw {
        // i64/f64 Display is the shortest round-tripping decimal form.
        RawValue::Int(i) => Encoded::Inline(TYPE_INT, i.to_string()),
        RawValue::Float(f) => Encoded::Inline(TYPE_FLOAT, f.to_string()),
        RawValue::Text(s) if s.len() <= INLINE_TEXT_LIMIT => Encoded::Inline(TYPE_TEXT, s),
        RawValue::Text(s) => Encoded::Blob(s.into_bytes()),
        RawValue::Bytes(b) => Encoded::Blob(b),
    }
}

/// Decode an inline payload. Blob payloads (`value_type` 4) are resolved by
/// [`crate::store::Store::decode_value`] since they need the object store.
pub fn decode_inline(name: &str, value_type: i64, payload: &str) -> Result<RawValue> {
    match value_type {
        TYPE_INT => payload
            .parse::<i64>()
            .map(RawValue::Int)
            .map_err(|e| FlorError::Type {
                name: name.to_string(),
                detail: format!("bad int payload {payload:?}: {e}"),
            }),
        TYPE_FLOAT => payload
            .parse::<f64>()
            .map(RawValue::Float)
            .map_err(|e| FlorError::Type {
                name: name.to_string(),
                detail: format!("bad float payload {payload:?}: {e}"),
            }),
        TYPE_TEXT => Ok(RawValue::Text(payload.to_string())),
        other => Err(FlorError::Type {
            name: name.to_string(),
            detail: format!("value_type {other} is not inline-decodable"),
        }),
    }
}
