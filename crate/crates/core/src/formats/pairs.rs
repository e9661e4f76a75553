//! Ordinal pair labels as a JSON array:
//! `[{"a": [x, y], "b": [x, y], "relation": "a_closer" | "b_closer"}, ...]`.

use super::{FormatError, Result};
use crate::metrics::OrdinalPair;

pub fn read_pairs(bytes: &[u8]) -> Result<Vec<OrdinalPair>> {
    let pairs: Vec<OrdinalPair> = serde_json::from_slice(bytes).map_err(|e| FormatError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if let Some(p) = pairs.iter().find(|p| p.a == p.b) {
        return Err(FormatError::Invalid(format!(
            "pair compares pixel {:?} with itself",
            p.a
        )));
    }
    Ok(pairs)
}

pub fn write_pairs(pairs: &[OrdinalPair]) -> String {
    serde_json::to_string(pairs).expect("pair serialization cannot fail")
}
