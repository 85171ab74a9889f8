use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader};

use super::{EvalError, LabelImage, VOID};
use crate::fusion::SemanticMap;
use crate::geometry::project_with_inverse;
use crate::keyframe::{Keyframe, Mask, Raster};

/// Rendered labels plus the z-buffer that selected them (`f64::INFINITY`
/// where void).
#[derive(Debug, Clone, PartialEq)]
pub struct Backprojection {
    pub labels: LabelImage,
    pub depth: Raster<f64>,
}

/// Splats each point into the pixel its projection rounds to; the nearest
/// point wins, ties going to the lower index.
///
/// # Panics
/// If `labels.len() != map.len()` or a label does not fit below [`VOID`].
pub fn backproject(map: &SemanticMap, labels: &[usize], kf: &Keyframe) -> Backprojection {
    assert_eq!(labels.len(), map.len(), "one label per map point");
    let k = kf.intrinsics();
    let world_to_cam = kf.pose().inverse();
    let mut out = Backprojection {
        labels: Raster::filled(k.width, k.height, 1, VOID),
        depth: Raster::filled(k.width, k.height, 1, f64::INFINITY),
    };
    for (p, &label) in map.points().iter().zip(labels) {
        assert!(label < VOID as usize, "label {label} does not fit a label image");
        let Some((u, v, z)) = project_with_inverse(&p.position, k, &world_to_cam).visible() else {
            continue;
        };
        let Some((x, y)) = k.pixel_of(u, v) else {
            continue;
        };
        if z < out.depth.get(x, y) {
            out.depth.set(x, y, z);
            out.labels.set(x, y, label as u8);
        }
    }
    out
}

pub fn backproject_labels(map: &SemanticMap, labels: &[usize], kf: &Keyframe) -> LabelImage {
    backproject(map, labels, kf).labels
}

/// Copy of `labels` with every pixel outside `mask` set to void.
pub fn restrict_to_mask(labels: &LabelImage, mask: &Mask) -> Result<LabelImage, EvalError> {
    if labels.dims() != mask.dims() {
        return Err(EvalError::DimensionMismatch {
            expected: labels.dims(),
            found: mask.dims(),
        });
    }
    let data = labels.data().iter().zip(mask.data()).map(|(&l, &m)| if m { l } else { VOID }).collect();
    Ok(Raster::from_vec(labels.width(), labels.height(), 1, data).expect("dims checked"))
}

/// Semi-dense domain of a keyframe as a mask.
pub fn depth_domain(kf: &Keyframe) -> Mask {
    let d = kf.depth();
    Raster::from_vec(d.width(), d.height(), 1, d.data().iter().map(|&v| v > 0.0).collect()).expect("same dims")
}

/// Reads an 8-bit single-channel PNG or PGM; values are class indices.
pub fn read_label_image(path: &Path) -> Result<LabelImage, EvalError> {
    let img = ImageReader::open(path)
        .map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|e| EvalError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(EvalError::Image {
            path: path.to_path_buf(),
            reason: format!("expected 8-bit single-channel labels, found {:?}", img.color()),
        });
    };
    let (w, h) = gray.dimensions();
    Ok(Raster::from_vec(w as usize, h as usize, 1, gray.into_raw()).expect("decoder dims"))
}

/// Writes a label image; the format follows the extension (`.png`, `.pgm`).
pub fn write_label_image(path: &Path, labels: &LabelImage) -> Result<(), EvalError> {
    let img = GrayImage::from_raw(labels.width() as u32, labels.height() as u32, labels.data().to_vec()).expect("raster dims");
    img.save(path).map_err(|e| EvalError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{AssociationGate, LabelDistribution, MapPoint, Origin};
    use crate::geometry::Normal;
    use crate::keyframe::tests::tiny_parts;
    use nalgebra::Vector3;

    fn at(p: [f64; 3]) -> MapPoint {
        MapPoint {
            position: Vector3::from(p),
            normal: Normal::Invalid,
            color: Vector3::zeros(),
            dist: LabelDistribution::uniform(3),
            origin: Origin::default(),
            viewpoint: Vector3::zeros(),
            observations: 1,
        }
    }

    #[test]
    fn empty_map_is_void() {
        let kf = Keyframe::new(tiny_parts(6, 4, 3)).unwrap();
        let img = backproject_labels(&SemanticMap::new(3), &[], &kf);
        assert!(img.data().iter().all(|&v| v == VOID));
    }

    #[test]
    fn nearest_point_wins() {
        let kf = Keyframe::new(tiny_parts(6, 4, 3)).unwrap();
        // principal point (3, 2) in tiny_parts
        let map = SemanticMap::from_points(3, vec![at([0.0, 0.0, 2.0]), at([0.0, 0.0, 1.0]), at([0.0, 0.0, -1.0])]).unwrap();
        let bp = backproject(&map, &[0, 1, 2], &kf);
        assert_eq!(bp.labels.get(3, 2), 1);
        assert_eq!(bp.depth.get(3, 2), 1.0);
        assert_eq!(bp.labels.data().iter().filter(|&&v| v != VOID).count(), 1);
    }

    #[test]
    fn self_consistent_with_source_keyframe() {
        let kf = Keyframe::new(tiny_parts(6, 4, 3)).unwrap();
        let mut map = SemanticMap::new(3);
        map.integrate_keyframe(&kf, &AssociationGate::default()).unwrap();
        let img = backproject_labels(&map, &map.argmax_labels(), &kf);
        for (x, y) in kf.semi_dense_pixels() {
            assert_eq!(img.get(x, y) as usize, kf.scores().argmax_at(x, y));
        }
        let masked = restrict_to_mask(&img, &depth_domain(&kf)).unwrap();
        assert_eq!(masked.data().iter().filter(|&&v| v != VOID).count(), kf.semi_dense_count());
    }

    #[test]
    fn label_image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img: LabelImage = Raster::from_vec(3, 2, 1, vec![0, 1, 2, VOID, 13, 0]).unwrap();
        for name in ["l.png", "l.pgm"] {
            let path = dir.path().join(name);
            write_label_image(&path, &img).unwrap();
            assert_eq!(read_label_image(&path).unwrap(), img);
        }
        let err = read_label_image(&dir.path().join("missing.png")).unwrap_err().to_string();
        assert!(err.contains("missing.png"), "{err}");
    }
}
