//! Deterministic JSON-shaped encoding used for signing and state hashing.
//!
//! Rules: map keys sorted by UTF-8 bytes, no whitespace, integers in minimal
//! base-10, byte strings as lowercase hex strings. Floats, nulls and booleans
//! are rejected so that every replica produces the same bytes.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::Hash;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonicalError {
    #[error("unsupported value at {path}: {kind}")]
    Unsupported { path: String, kind: &'static str },
    #[error("serialization failed: {0}")]
    Serde(String),
}

/// Encode a structured value. The value must only contain integers, strings,
/// lists and string-keyed maps.
pub fn canonical_serialize(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::with_capacity(128);
    emit(value, &mut out, &mut String::from("$"))?;
    Ok(out)
}

/// Encode any serde-serializable type through its JSON data model.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let v = serde_json::to_value(value).map_err(|e| CanonicalError::Serde(e.to_string()))?;
    canonical_serialize(&v)
}

/// Canonical bytes are valid JSON, so decoding is ordinary deserialization.
pub fn from_canonical<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    serde_json::from_slice(bytes).map_err(|e| CanonicalError::Serde(e.to_string()))
}

/// SHA256 over the canonical encoding.
pub fn canonical_hash<T: Serialize + ?Sized>(value: &T) -> Result<Hash, CanonicalError> {
    Ok(Hash::digest(&to_canonical(value)?))
}

fn emit(value: &Value, out: &mut Vec<u8>, path: &mut String) -> Result<(), CanonicalError> {
    match value {
        Value::Null => Err(CanonicalError::Unsupported {
            path: path.clone(),
            kind: "null",
        }),
        Value::Bool(_) => Err(CanonicalError::Unsupported {
            path: path.clone(),
            kind: "boolean",
        }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else {
                return Err(CanonicalError::Unsupported {
                    path: path.clone(),
                    kind: "float",
                });
            }
            Ok(())
        }
        Value::String(s) => {
            // serde_json's string escaping is fixed and whitespace free.
            let quoted = serde_json::to_string(s).expect("string encoding is infallible");
            out.extend_from_slice(quoted.as_bytes());
            Ok(())
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                emit(item, out, path)?;
                path.truncate(len);
            }
            out.push(b']');
            Ok(())
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                let quoted = serde_json::to_string(key).expect("string encoding is infallible");
                out.extend_from_slice(quoted.as_bytes());
                out.push(b':');
                let len = path.len();
                path.push('.');
                path.push_str(key);
                emit(item, out, path)?;
                path.truncate(len);
            }
            out.push(b'}');
            Ok(())
        }
    }
}
