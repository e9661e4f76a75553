//! JSON dataset manifests.
//!
//! ```json
//! { "entries": [ { "id": "kitti_0001", "image_path": "img/0001.png",
//!                  "pred_path": "pred/0001.pfm", "gt_path": "gt/0001.pfm",
//!                  "depth_cap": 80.0 } ] }
//! ```
//!
//! Unknown keys at either level are kept and written back out.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{read_file, FormatError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_cap: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, image_path: impl Into<String>) -> Self {
        ManifestEntry {
            id: id.into(),
            image_path: image_path.into(),
            pred_path: None,
            gt_path: None,
            pairs_path: None,
            depth_cap: None,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Every entry must name a target (dense GT or ordinal pairs).
    pub fn validate_for_eval(&self) -> Result<()> {
        for e in &self.entries {
            if e.gt_path.is_none() && e.pairs_path.is_none() {
                return Err(FormatError::NoTarget(e.id.clone()));
            }
        }
        Ok(())
    }
}

pub fn read_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| {
        let (line, column, message) = (e.line(), e.column(), e.to_string());
        if message.starts_with("missing field") {
            FormatError::MissingField {
                line,
                column,
                message,
            }
        } else {
            FormatError::Syntax {
                line,
                column,
                message,
            }
        }
    })?;
    let mut seen = HashSet::new();
    for e in &m.entries {
        if !seen.insert(e.id.as_str()) {
            return Err(FormatError::DuplicateId(e.id.clone()));
        }
    }
    Ok(m)
}

pub fn read_manifest_file(path: &Path) -> Result<Manifest> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| FormatError::Syntax {
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    let mut m = read_manifest(&text)?;
    m.base_dir = Some(
        path.parent()
            .map(Path::to_path_buf)
            .unwrap_or_default(),
    );
    Ok(m)
}

pub fn write_manifest(m: &Manifest) -> String {
    serde_json::to_string_pretty(m).expect("manifest serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_entries_are_valid() {
        let m = read_manifest(r#"{"entries": []}"#).unwrap();
        assert!(m.entries.is_empty());
        m.validate_for_eval().unwrap();
    }

    #[test]
    fn missing_target_names_id() {
        let m = read_manifest(r#"{"entries": [{"id": "x7", "image_path": "a.png"}]}"#).unwrap();
        match m.validate_for_eval() {
            Err(FormatError::NoTarget(id)) => assert_eq!(id, "x7"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn roundtrip_keeps_unknown_fields() {
        let text = r#"{
  "dataset": "toy",
  "entries": [
    {"id": "a", "image_path": "a.png", "gt_path": "a.pfm", "note": {"k": [1, 2]}},
    {"id": "b", "image_path": "b.png", "pairs_path": "b.json", "depth_cap": 10.0},
    {"id": "c", "image_path": "/abs/c.png", "pred_path": "c.pfm", "gt_path": "c_gt.pfm"}
  ]
}"#;
        let m = read_manifest(text).unwrap();
        assert_eq!(m.extra["dataset"], "toy");
        assert_eq!(m.entries[0].extra["note"]["k"][1], 2);
        let again = read_manifest(&write_manifest(&m)).unwrap();
        assert_eq!(again, m);
        let a: Value = serde_json::from_str(text).unwrap();
        let b: Value = serde_json::from_str(&write_manifest(&m)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_carry_positions() {
        match read_manifest("{\n  \"entries\": [\n    {\"id\": 1,}\n") {
            Err(FormatError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_manifest(r#"{"entries": [{"id": "a"}]}"#),
            Err(FormatError::MissingField { .. })
        ));
        assert!(matches!(
            read_manifest(r#"{"entries": [{"id": "a", "image_path": "x"}, {"id": "a", "image_path": "y"}]}"#),
            Err(FormatError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"{"entries": [{"id": "a", "image_path": "sub/a.png"}]}"#).unwrap();
        let m = read_manifest_file(&p).unwrap();
        assert_eq!(m.resolve(&m.entries[0].image_path), dir.path().join("sub/a.png"));
        assert_eq!(m.resolve("/x/y.png"), PathBuf::from("/x/y.png"));
    }

    proptest! {
        #[test]
        fn read_is_total(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = read_manifest(&String::from_utf8_lossy(&bytes));
        }

        #[test]
        fn read_is_total_on_jsonish(s in r#"\{"entries": ?\[(\{("id"|"image_path"|"x"): ?("a"|1|null),? ?\},?)*\]?\}?"#) {
            let _ = read_manifest(&s);
        }
    }
}
