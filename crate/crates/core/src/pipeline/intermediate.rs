//! `map.sdsm`: the fused map between the fuse and regularize stages.
//!
//! Little-endian layout:
//!
//! ```text
//! magic     b"SDSM"
//! version   u32            (currently 1)
//! classes   u32            M
//! count     u64            N
//! N records:
//!   position     3 × f64
//!   normal flag  u8        1 = valid, 0 = invalid (normal bytes then zero)
//!   normal       3 × f64
//!   color        3 × f64   RGB in [0, 1]
//!   distribution M × f64   exposed probabilities
//!   log-weights  M × f64   fusion accumulator the probabilities derive from
//!   origin       u64 keyframe index, u32 x, u32 y
//!   viewpoint    3 × f64
//!   observations u32
//! ```
//!
//! All values are stored at full precision, so a decoded map is identical to
//! the encoded one, fusion state included.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::PipelineError;
use crate::fusion::{LabelDistribution, MapPoint, Origin, SemanticMap};
use crate::geometry::Normal;

pub const SDSM_MAGIC: &[u8; 4] = b"SDSM";
pub const SDSM_VERSION: u32 = 1;

fn put_vec3(out: &mut Vec<u8>, v: &Vector3<f64>) {
    for c in v.iter() {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

pub fn encode_map(map: &SemanticMap) -> Vec<u8> {
    let m = map.num_classes();
    let record = 8 * (3 + 3 + 3 + 2 * m + 3) + 1 + 8 + 4 + 4 + 4;
    let mut out = Vec::with_capacity(20 + record * map.len());
    out.extend_from_slice(SDSM_MAGIC);
    out.extend_from_slice(&SDSM_VERSION.to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(map.len() as u64).to_le_bytes());
    for p in map.points() {
        put_vec3(&mut out, &p.position);
        match p.normal.get() {
            Some(n) => {
                out.push(1);
                put_vec3(&mut out, n);
            }
            None => {
                out.push(0);
                put_vec3(&mut out, &Vector3::zeros());
            }
        }
        put_vec3(&mut out, &p.color);
        for v in p.dist.probs().iter().chain(p.dist.log_weights()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(p.origin.keyframe as u64).to_le_bytes());
        out.extend_from_slice(&(p.origin.x as u32).to_le_bytes());
        out.extend_from_slice(&(p.origin.y as u32).to_le_bytes());
        put_vec3(&mut out, &p.viewpoint);
        out.extend_from_slice(&p.observations.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], String> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        self.pos = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, String> {
        self.take().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, String> {
        self.take().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, String> {
        self.take().map(f64::from_le_bytes)
    }

    fn vec3(&mut self) -> Result<Vector3<f64>, String> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn decode_map(bytes: &[u8], path: &Path) -> Result<SemanticMap, PipelineError> {
    let corrupt = |reason: String| PipelineError::CorruptIntermediate {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>().map_err(corrupt)? != SDSM_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = r.u32().map_err(corrupt)?;
    if version != SDSM_VERSION {
        return Err(PipelineError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: SDSM_VERSION,
        });
    }
    let m = r.u32().map_err(corrupt)? as usize;
    let count = r.u64().map_err(corrupt)? as usize;
    let record = 8 * (12 + 2 * m) + 21;
    if bytes.len() != 20 + count.saturating_mul(record) {
        return Err(corrupt(format!("{} bytes for {count} points of {m} classes", bytes.len())));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let mut read = || -> Result<MapPoint, String> {
            let position = r.vec3()?;
            let flag = r.take::<1>()?[0];
            let n = r.vec3()?;
            let normal = match flag {
                0 => Normal::Invalid,
                1 => Normal::Valid(n),
                f => return Err(format!("normal flag {f}")),
            };
            let color = r.vec3()?;
            let probs = (0..m).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let logs = (0..m).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let dist = LabelDistribution::from_parts(probs, logs).map_err(|e| e.to_string())?;
            let origin = Origin {
                keyframe: r.u64()? as usize,
                x: r.u32()? as usize,
                y: r.u32()? as usize,
            };
            Ok(MapPoint {
                position,
                normal,
                color,
                dist,
                origin,
                viewpoint: r.vec3()?,
                observations: r.u32()?,
            })
        };
        points.push(read().map_err(|e| corrupt(format!("point {i}: {e}")))?);
    }
    SemanticMap::from_points(m, points).map_err(|e| corrupt(e.to_string()))
}

pub fn write_map(path: &Path, map: &SemanticMap) -> Result<(), PipelineError> {
    fs::write(path, encode_map(map)).map_err(|source| PipelineError::io(path, source))
}

pub fn read_map(path: &Path) -> Result<SemanticMap, PipelineError> {
    let bytes = fs::read(path).map_err(|source| PipelineError::io(path, source))?;
    decode_map(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SemanticMap {
        let pts = (0..4)
            .map(|i| MapPoint {
                position: Vector3::new(i as f64 * 0.1, 1.0 / 3.0, -2.5),
                normal: if i % 2 == 0 { Normal::Valid(Vector3::z()) } else { Normal::Invalid },
                color: Vector3::new(0.2, 0.4, 0.6),
                dist: LabelDistribution::normalize(&[1.0, i as f64 + 0.5, 0.3]).unwrap(),
                origin: Origin { keyframe: i, x: 3, y: 7 },
                viewpoint: Vector3::new(0.0, 0.1, 0.2),
                observations: i as u32 + 1,
            })
            .collect();
        SemanticMap::from_points(3, pts).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let map = sample();
        let bytes = encode_map(&map);
        assert_eq!(&bytes[..4], b"SDSM");
        assert_eq!(decode_map(&bytes, Path::new("m.sdsm")).unwrap(), map);
        let empty = SemanticMap::new(5);
        assert_eq!(decode_map(&encode_map(&empty), Path::new("e")).unwrap(), empty);
    }

    #[test]
    fn rejects_bad_files() {
        let mut bytes = encode_map(&sample());
        let p = Path::new("x.sdsm");
        assert!(matches!(
            decode_map(&bytes[..bytes.len() - 1], p),
            Err(PipelineError::CorruptIntermediate { .. })
        ));
        bytes[4] = 9;
        let err = decode_map(&bytes, p).unwrap_err();
        assert!(matches!(err, PipelineError::VersionMismatch { found: 9, .. }));
        assert!(err.to_string().contains("x.sdsm"));
        assert!(matches!(decode_map(b"PLY\0", p), Err(PipelineError::CorruptIntermediate { .. })));
        let missing = read_map(Path::new("/nonexistent/map.sdsm")).unwrap_err().to_string();
        assert!(missing.contains("/nonexistent/map.sdsm"), "{missing}");
    }
}
