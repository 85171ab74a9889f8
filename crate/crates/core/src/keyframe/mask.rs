use super::{Keyframe, KeyframeError, Mask, Raster};

/// 5/255 intensity units per pixel.
pub const DEFAULT_GRADIENT_THRESHOLD: f64 = 5.0 / 255.0;

/// Marks pixels whose central-difference gradient magnitude exceeds
/// `threshold`. The one-pixel border has no central difference and is
/// always false.
pub fn semi_dense_mask(intensity: &Raster<f32>, threshold: f64) -> Mask {
    let (w, h) = intensity.dims();
    let mut mask = Raster::filled(w, h, 1, false);
    if w < 3 || h < 3 {
        return mask;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (intensity.get(x + 1, y) as f64 - intensity.get(x - 1, y) as f64) * 0.5;
            let gy = (intensity.get(x, y + 1) as f64 - intensity.get(x, y - 1) as f64) * 0.5;
            if (gx * gx + gy * gy).sqrt() > threshold {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Clears depth wherever `mask` is false. Variance, scores and images are
/// left untouched.
pub fn apply_mask(kf: &Keyframe, mask: &Mask) -> Result<Keyframe, KeyframeError> {
    if mask.dims() != kf.depth().dims() {
        return Err(KeyframeError::DimensionMismatch {
            what: "mask".into(),
            expected: kf.depth().dims(),
            found: mask.dims(),
        });
    }
    let mut depth = kf.depth().clone();
    for (d, &keep) in depth.data_mut().iter_mut().zip(mask.data()) {
        if !keep {
            *d = 0.0;
        }
    }
    Ok(kf.with_depth(depth))
}
