//! Strict lowercase-hex helpers for fixed-size byte arrays.
//!
//! Decoding rejects uppercase digits so that every byte array has exactly
//! one textual form; the ledger relies on this for tamper evidence.

use serde::{Deserialize, Deserializer, Serializer};

pub(crate) fn encode(bytes: &[u8]) -> String {
    hex::encode(bytes)
}

pub(crate) fn decode_array<const N: usize>(s: &str) -> Result<[u8; N], String> {
    if s.len() != N * 2 {
        return Err(format!("expected {} hex chars, got {}", N * 2, s.len()));
    }
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err("hex must be lowercase".to_string());
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(s, &mut out).map_err(|e| e.to_string())?;
    Ok(out)
}

pub(crate) fn serialize<S: Serializer, const N: usize>(
    bytes: &[u8; N],
    serializer: S,
) -> Result<S::Ok, S::Error> {
    serializer.serialize_str(&encode(bytes))
}

pub(crate) fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
    deserializer: D,
) -> Result<[u8; N], D::Error> {
    let s = String::deserialize(deserializer)?;
    decode_array(&s).map_err(serde::de::Error::custom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_uppercase_and_bad_length() {
        assert!(decode_array::<2>("abcd").is_ok());
        assert!(decode_array::<2>("ABCD").is_err());
        assert!(decode_array::<2>("abc").is_err());
        assert!(decode_array::<2>("zzzz").is_err());
    }
}
