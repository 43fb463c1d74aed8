//! Canonical JSON encoding.
//!
//! Every hashed or signed structure in the crate goes through this writer:
//! object keys sorted by byte order, no insignificant whitespace, UTF-8,
//! integers only. Floating point values are refused because their textual
//! form is not portable across implementations.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error("value cannot be represented as JSON: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("floating point number {0} is not allowed in canonical form")]
    Float(String),
}

/// Encode `value` into canonical JSON bytes.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let value = serde_json::to_value(value)?;
    let mut out = Vec::with_capacity(256);
    write_value(&value, &mut out)?;
    Ok(out)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if n.is_f64() {
                return Err(CanonicalError::Float(n.to_string()));
            }
            out.extend_from_slice(n.to_string().as_bytes());
        }
        Value::String(s) => serde_json::to_writer(&mut *out, s)?,
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push(b'{');
            for (i, (key, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                serde_json::to_writer(&mut *out, key)?;
                out.push(b':');
                write_value(item, out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_and_whitespace_free() {
        let v = json!({"zeta": 1, "alpha": {"b": [1, 2], "a": "x y"}, "mid": null});
        let bytes = to_canonical_bytes(&v).unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            r#"{"alpha":{"a":"x y","b":[1,2]},"mid":null,"zeta":1}"#
        );
    }

    #[test]
    fn floats_are_rejected() {
        assert!(matches!(
            to_canonical_bytes(&json!({"x": 0.5})),
            Err(CanonicalError::Float(_))
        ));
    }

    #[test]
    fn strings_are_escaped() {
        let bytes = to_canonical_bytes(&json!("a\"b\\c\n")).unwrap();
        assert_eq!(bytes, br#""a\"b\\c\n""#);
    }
}
