//! Sequence manifests.
//!
//! ```json
//! {
//!   "intrinsics": {"fx": 80, "fy": 80, "cx": 39.5, "cy": 29.5, "width": 80, "height": 60},
//!   "classes": ["floor", "wall"],
//!   "keyframes": [
//!     {"index": 0, "pose": [1,0,0,0, 0,0,0, 1],
//!      "intensity": "kf000_intensity.pfm", "color": "kf000_color.png",
//!      "depth": "kf000_depth.pfm", "variance": "kf000_variance.pfm",
//!      "scores": "kf000_scores.bin"}
//!   ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. An optional
//! `"num_classes"` field, when present, must equal the length of `"classes"`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::KeyframeError;
use crate::geometry::{Intrinsics, Sim3Pose};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    intrinsics: Intrinsics,
    classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_classes: Option<usize>,
    keyframes: Vec<EntryDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    index: usize,
    pose: Vec<f64>,
    intensity: PathBuf,
    color: PathBuf,
    depth: PathBuf,
    variance: PathBuf,
    scores: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeEntry {
    pub index: usize,
    pub pose: Sim3Pose,
    pub intensity: PathBuf,
    pub color: PathBuf,
    pub depth: PathBuf,
    pub variance: PathBuf,
    pub scores: PathBuf,
}

impl KeyframeEntry {
    fn files(&self) -> [&Path; 5] {
        [&self.intensity, &self.color, &self.depth, &self.variance, &self.scores]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    pub intrinsics: Intrinsics,
    pub classes: Vec<String>,
    pub keyframes: Vec<KeyframeEntry>,
}

impl SequenceManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Parses and validates a manifest; every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self, KeyframeError> {
        let text = fs::read_to_string(path).map_err(|e| KeyframeError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self, KeyframeError> {
        let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| {
            use serde_json::error::Category;
            match e.classify() {
                Category::Data => KeyframeError::Schema {
                    path: origin.to_path_buf(),
                    reason: e.to_string(),
                },
                _ => KeyframeError::Parse {
                    path: origin.to_path_buf(),
                    reason: e.to_string(),
                },
            }
        })?;
        let schema = |reason: String| KeyframeError::Schema {
            path: origin.to_path_buf(),
            reason,
        };
        doc.intrinsics.validate().map_err(|e| schema(e.to_string()))?;
        if let Some(m) = doc.num_classes {
            if m != doc.classes.len() {
                return Err(schema(format!("num_classes is {m} but {} class names are listed", doc.classes.len())));
            }
        }
        if doc.classes.len() < 2 {
            return Err(schema("at least two classes are required".into()));
        }
        if doc.keyframes.is_empty() {
            return Err(schema("keyframe list is empty".into()));
        }
        let mut keyframes = Vec::with_capacity(doc.keyframes.len());
        for e in doc.keyframes {
            let arr: [f64; 8] = e
                .pose
                .as_slice()
                .try_into()
                .map_err(|_| schema(format!("keyframe {}: pose must have 8 numbers, found {}", e.index, e.pose.len())))?;
            let pose = Sim3Pose::from_array(arr).map_err(|err| schema(format!("keyframe {}: {err}", e.index)))?;
            let entry = KeyframeEntry {
                index: e.index,
                pose,
                intensity: base.join(e.intensity),
                color: base.join(e.color),
                depth: base.join(e.depth),
                variance: base.join(e.variance),
                scores: base.join(e.scores),
            };
            for f in entry.files() {
                if !f.is_file() {
                    return Err(KeyframeError::MissingFile {
                        index: entry.index,
                        path: f.to_path_buf(),
                    });
                }
            }
            keyframes.push(entry);
        }
        Ok(Self {
            intrinsics: doc.intrinsics,
            classes: doc.classes,
            keyframes,
        })
    }

    /// Writes the manifest to `path`, storing file references relative to
    /// its directory where possible.
    pub fn write(&self, path: &Path) -> Result<(), KeyframeError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
        let doc = ManifestDoc {
            intrinsics: self.intrinsics,
            classes: self.classes.clone(),
            num_classes: None,
            keyframes: self
                .keyframes
                .iter()
                .map(|e| EntryDoc {
                    index: e.index,
                    pose: e.pose.to_array().to_vec(),
                    intensity: rel(&e.intensity),
                    color: rel(&e.color),
                    depth: rel(&e.depth),
                    variance: rel(&e.variance),
                    scores: rel(&e.scores),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        fs::write(path, text).map_err(|e| KeyframeError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch_bundle(dir: &Path, i: usize) -> String {
        for kind in ["i.pfm", "c.png", "d.pfm", "v.pfm", "s.bin"] {
            fs::write(dir.join(format!("{i}{kind}")), b"x").unwrap();
        }
        format!(
            r#"{{"index":{i},"pose":[1,0,0,0,0,0,{i},1],"intensity":"{i}i.pfm","color":"{i}c.png","depth":"{i}d.pfm","variance":"{i}v.pfm","scores":"{i}s.bin"}}"#
        )
    }

    fn doc(entries: &[String], classes: &str) -> String {
        format!(
            r#"{{"intrinsics":{{"fx":10,"fy":10,"cx":2,"cy":2,"width":4,"height":4}},"classes":{classes},"keyframes":[{}]}}"#,
            entries.join(",")
        )
    }

    #[test]
    fn preserves_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let entries: Vec<String> = [2, 0, 1].iter().map(|&i| touch_bundle(dir.path(), i)).collect();
        let path = dir.path().join("m.json");
        fs::write(&path, doc(&entries, r#"["a","b","c"]"#)).unwrap();
        let m = SequenceManifest::load(&path).unwrap();
        assert_eq!(m.keyframes.iter().map(|e| e.index).collect::<Vec<_>>(), vec![2, 0, 1]);
        assert_eq!(m.num_classes(), 3);
        assert_eq!(m.keyframes[0].depth, dir.path().join("2d.pfm"));
    }

    #[test]
    fn class_count_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = touch_bundle(dir.path(), 0);
        let names: Vec<String> = (0..13).map(|i| format!("\"c{i}\"")).collect();
        let text = doc(&[e], &format!("[{}]", names.join(","))).replacen("\"classes\"", "\"num_classes\":14,\"classes\"", 1);
        let path = dir.path().join("m.json");
        fs::write(&path, text).unwrap();
        assert!(matches!(SequenceManifest::load(&path), Err(KeyframeError::Schema { .. })));
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let e = touch_bundle(dir.path(), 0);
        fs::remove_file(dir.path().join("0d.pfm")).unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, doc(&[e], r#"["a","b"]"#)).unwrap();
        match SequenceManifest::load(&path) {
            Err(err @ KeyframeError::MissingFile { .. }) => assert!(err.to_string().contains("0d.pfm")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_vs_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, "{not json").unwrap();
        assert!(matches!(SequenceManifest::load(&path), Err(KeyframeError::Parse { .. })));
        fs::write(&path, r#"{"classes":["a","b"],"keyframes":[]}"#).unwrap();
        assert!(matches!(SequenceManifest::load(&path), Err(KeyframeError::Schema { .. })));
        let e = touch_bundle(dir.path(), 0).replace("[1,0,0,0,0,0,0,1]", "[1,0,0,0,0,0,0]");
        fs::write(&path, doc(&[e], r#"["a","b"]"#)).unwrap();
        assert!(matches!(SequenceManifest::load(&path), Err(KeyframeError::Schema { .. })));
    }

    #[test]
    fn empty_keyframe_list_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, doc(&[], r#"["a","b"]"#)).unwrap();
        assert!(matches!(SequenceManifest::load(&path), Err(KeyframeError::Schema { .. })));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let entries: Vec<String> = (0..3).map(|i| touch_bundle(dir.path(), i)).collect();
        let path = dir.path().join("m.json");
        fs::write(&path, doc(&entries, r#"["a","b"]"#)).unwrap();
        let m = SequenceManifest::load(&path).unwrap();
        let out = dir.path().join("again.json");
        m.write(&out).unwrap();
        assert_eq!(SequenceManifest::load(&out).unwrap(), m);
    }
}
