//! Canonical serialization and content hashing.
//!
//! Every digest in the project is SHA-256 over a canonical UTF-8 JSON text:
//! object keys sorted, no insignificant whitespace.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Algorithm tag written into manifests and digests.
pub const DIGEST_ALGORITHM: &str = "sha256";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sorted-key compact JSON text for any serializable value.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    // Round-tripping through `Value` sorts map keys (BTreeMap-backed).
    let value = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&value).expect("value serializes")
}

/// Sorted-key, two-space indented JSON text with a trailing newline.
pub fn canonical_json_pretty<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("serializable value");
    let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
    text.push('\n');
    text
}

pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

/// Serde adapter writing a `Decimal` as a JSON number with its exact text.
pub mod decimal_number {
    use rust_decimal::Decimal;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};
    use std::str::FromStr;

    pub fn serialize<S: Serializer>(value: &Decimal, serializer: S) -> Result<S::Ok, S::Error> {
        let number = serde_json::Number::from_str(&value.to_string()).map_err(serde::ser::Error::custom)?;
        number.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Decimal, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        parse(&value).map_err(D::Error::custom)
    }

    pub(crate) fn parse(value: &serde_json::Value) -> Result<Decimal, String> {
        let text = match value {
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::String(s) => s.clone(),
            other => return Err(format!("expected a decimal number, found {other}")),
        };
        parse_text(&text)
    }

    pub(crate) fn parse_text(text: &str) -> Result<Decimal, String> {
        if text.contains(['e', 'E']) {
            Decimal::from_scientific(text).map_err(|e| format!("invalid decimal `{text}`: {e}"))
        } else {
            Decimal::from_str(text).map_err(|e| format!("invalid decimal `{text}`: {e}"))
        }
    }
}

/// `Option<Decimal>` variant of [`decimal_number`].
pub mod opt_decimal_number {
    use rust_decimal::Decimal;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<Decimal>, serializer: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(d) => super::decimal_number::serialize(d, serializer),
            None => serializer.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Option<Decimal>, D::Error> {
        let value = Option::<serde_json::Value>::deserialize(deserializer)?;
        match value {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(v) => super::decimal_number::parse(&v).map(Some).map_err(D::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn canonical_json_sorts_keys() {
        let mut m = BTreeMap::new();
        m.insert("b", 1);
        m.insert("a", 2);
        assert_eq!(canonical_json(&m), r#"{"a":2,"b":1}"#);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
