//! Versioned JSON container. Numeric arrays are base64 strings of
//! little-endian `f64` (or `u32` for indices).

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub format_version: u32,
    pub kind: String,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| StarError::Format(format!("bad base64 array: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(StarError::Format(format!(
            "f64 array has {} bytes, not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn encode_indices(values: &[usize]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_indices(text: &str) -> Result<Vec<usize>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| StarError::Format(format!("bad base64 array: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(StarError::Format(format!(
            "index array has {} bytes, not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect())
}

/// Reads the header of a container and checks version and kind.
pub fn peek_header(text: &str) -> Result<ContainerHeader> {
    let header: ContainerHeader = serde_json::from_str(text)
        .map_err(|e| StarError::Format(format!("not a container: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(StarError::Format(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    Ok(header)
}

pub(crate) fn parse_kind<T: DeserializeOwned>(text: &str, kind: &str) -> Result<T> {
    let header = peek_header(text)?;
    if header.kind != kind {
        return Err(StarError::Format(format!(
            "expected a '{kind}' container, found '{}'",
            header.kind
        )));
    }
    serde_json::from_str(text).map_err(|e| StarError::Format(format!("malformed {kind}: {e}")))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| StarError::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)
        .map_err(|e| StarError::Format(format!("serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| StarError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_unknown_version() {
        let text = r#"{"format_version": 2, "kind": "star-model"}"#;
        assert!(matches!(peek_header(text), Err(StarError::Format(_))));
    }

    proptest! {
        #[test]
        fn f64_arrays_round_trip(v in proptest::collection::vec(any::<f64>(), 0..64)) {
            let back = decode_f64s(&encode_f64s(&v)).unwrap();
            prop_assert_eq!(back.len(), v.len());
            for (a, b) in back.iter().zip(&v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
