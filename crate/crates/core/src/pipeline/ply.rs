use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fusion::SemanticMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    /// Class palette colour.
    #[default]
    Argmax,
    /// Class palette colour scaled by the label's confidence.
    Confidence,
}

/// Class colours, cycled for labels beyond its length.
pub const PALETTE: [[u8; 3]; 14] = [
    [174, 199, 232],
    [152, 223, 138],
    [31, 119, 180],
    [255, 187, 120],
    [188, 189, 34],
    [140, 86, 75],
    [255, 152, 150],
    [214, 39, 40],
    [197, 176, 213],
    [148, 103, 189],
    [196, 156, 148],
    [23, 190, 207],
    [247, 182, 210],
    [219, 219, 141],
];

const HEADER_PROPERTIES: &str = "property float x\n\
property float y\n\
property float z\n\
property float nx\n\
property float ny\n\
property float nz\n\
property uchar red\n\
property uchar green\n\
property uchar blue\n\
property uchar label\n\
property float confidence\n\
end_header\n";

const RECORD_BYTES: usize = 6 * 4 + 3 + 1 + 4;

pub fn label_color(label: usize, confidence: f64, mode: ExportMode) -> [u8; 3] {
    let base = PALETTE[label % PALETTE.len()];
    match mode {
        ExportMode::Argmax => base,
        ExportMode::Confidence => base.map(|c| (c as f64 * confidence.clamp(0.0, 1.0)).round() as u8),
    }
}

/// Binary little-endian PLY, one vertex per map point. Normals are zero where
/// invalid.
///
/// # Panics
/// If `labels` or `confidence` do not have one entry per point, or a label
/// exceeds 255.
pub fn encode_ply(map: &SemanticMap, labels: &[usize], confidence: &[f64], mode: ExportMode) -> Vec<u8> {
    assert_eq!(labels.len(), map.len(), "one label per point");
    assert_eq!(confidence.len(), map.len(), "one confidence per point");
    let header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment semi-dense semantic map\nelement vertex {}\n{HEADER_PROPERTIES}",
        map.len()
    );
    let mut out = Vec::with_capacity(header.len() + RECORD_BYTES * map.len());
    out.extend_from_slice(header.as_bytes());
    for ((p, &label), &conf) in map.points().iter().zip(labels).zip(confidence) {
        let n = p.normal.get().copied().unwrap_or_default();
        for v in [p.position.x, p.position.y, p.position.z, n.x, n.y, n.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&label_color(label, conf, mode));
        out.push(u8::try_from(label).expect("label fits in a byte"));
        out.extend_from_slice(&(conf as f32).to_le_bytes());
    }
    out
}

pub fn export_ply(path: &Path, map: &SemanticMap, labels: &[usize], confidence: &[f64], mode: ExportMode) -> Result<(), PipelineError> {
    fs::write(path, encode_ply(map, labels, confidence, mode)).map_err(|source| PipelineError::io(path, source))
}

/// One decoded vertex of a file written by [`export_ply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyVertex {
    pub position: [f32; 3],
    pub normal: [f32; 3],
    pub color: [u8; 3],
    pub label: u8,
    pub confidence: f32,
}

/// Parses files in the exact layout produced by [`export_ply`].
pub fn decode_ply(bytes: &[u8], path: &Path) -> Result<Vec<PlyVertex>, PipelineError> {
    let bad = |reason: String| PipelineError::Ply {
        path: path.to_path_buf(),
        reason,
    };
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing end_header".into()))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") || lines.next() != Some("format binary_little_endian 1.0") {
        return Err(bad("not a binary little-endian PLY".into()));
    }
    let mut count = None;
    let mut properties = String::new();
    for line in lines {
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(n.trim().parse::<usize>().map_err(|_| bad(format!("bad vertex count {n:?}")))?);
        } else if line.starts_with("property") || line == "end_header" {
            properties.push_str(line);
            properties.push('\n');
        } else if !line.starts_with("comment") {
            return Err(bad(format!("unexpected header line {line:?}")));
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    if properties != HEADER_PROPERTIES {
        return Err(bad("unexpected vertex properties".into()));
    }
    let body = &bytes[end..];
    if body.len() != count * RECORD_BYTES {
        return Err(bad(format!("{} body bytes for {count} vertices", body.len())));
    }
    let f = |b: &[u8], i: usize| f32::from_le_bytes(b[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    Ok(body
        .chunks_exact(RECORD_BYTES)
        .map(|r| PlyVertex {
            position: [f(r, 0), f(r, 1), f(r, 2)],
            normal: [f(r, 3), f(r, 4), f(r, 5)],
            color: [r[24], r[25], r[26]],
            label: r[27],
            confidence: f32::from_le_bytes(r[28..32].try_into().expect("4 bytes")),
        })
        .collect())
}

pub fn read_ply(path: &Path) -> Result<Vec<PlyVertex>, PipelineError> {
    let bytes = fs::read(path).map_err(|source| PipelineError::io(path, source))?;
    decode_ply(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{LabelDistribution, MapPoint, Origin};
    use crate::geometry::Normal;
    use nalgebra::Vector3;

    fn one_point() -> SemanticMap {
        let p = MapPoint {
            position: Vector3::new(1.0, -2.0, 3.5),
            normal: Normal::Invalid,
            color: Vector3::zeros(),
            dist: LabelDistribution::uniform(3),
            origin: Origin::default(),
            viewpoint: Vector3::zeros(),
            observations: 1,
        };
        SemanticMap::from_points(3, vec![p]).unwrap()
    }

    #[test]
    fn empty_map_has_zero_vertices() {
        let bytes = encode_ply(&SemanticMap::new(3), &[], &[], ExportMode::Argmax);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("element vertex 0\n"));
        assert!(text.ends_with("end_header\n"));
        assert!(decode_ply(&bytes, Path::new("e.ply")).unwrap().is_empty());
    }

    #[test]
    fn single_vertex_carries_label_and_confidence() {
        let bytes = encode_ply(&one_point(), &[2], &[0.9], ExportMode::Confidence);
        let v = decode_ply(&bytes, Path::new("p.ply")).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].label, 2);
        assert_eq!(v[0].confidence, 0.9f32);
        assert_eq!(v[0].position, [1.0, -2.0, 3.5]);
        assert_eq!(v[0].normal, [0.0; 3]);
        assert_eq!(v[0].color, label_color(2, 0.9, ExportMode::Confidence));
        let argmax = decode_ply(&encode_ply(&one_point(), &[2], &[0.9], ExportMode::Argmax), Path::new("p")).unwrap();
        assert_eq!(argmax[0].color, PALETTE[2]);
    }

    #[test]
    fn rejects_foreign_layouts() {
        let p = Path::new("bad.ply");
        assert!(decode_ply(b"ply\nformat ascii 1.0\nend_header\n", p).is_err());
        let mut bytes = encode_ply(&one_point(), &[0], &[0.5], ExportMode::Argmax);
        bytes.pop();
        let err = decode_ply(&bytes, p).unwrap_err().to_string();
        assert!(err.contains("bad.ply"), "{err}");
    }
}
