//! Synthetic desk-scale scenes with exact ground truth.
//!
//! Primitives are textured with a checkerboard so the semi-dense mask has
//! gradients to work with. Each pixel of a keyframe gets the z-buffered
//! depth of the nearest primitive; depth noise, score noise and label
//! corruption are drawn from one seeded stream in a fixed order (frame,
//! then row-major pixel), so a spec and seed fully determine the output.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as Gaussian};

use super::{write_label_image, EvalError, LabelImage, VOID};
use crate::geometry::{Intrinsics, Sim3Pose};
use crate::keyframe::{apply_mask, semi_dense_mask, write_keyframe_bundle, Keyframe, KeyframeParts, Mask, Raster, ScoreTensor, SequenceManifest};

/// Parallelogram `origin + a·edge_u + b·edge_v`, `a, b ∈ [0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quad {
    pub origin: Vector3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Quad(Quad),
    /// Axis-aligned box, rendered as its six faces.
    Box {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
        class: usize,
    },
}

impl Primitive {
    fn faces(&self) -> Vec<Quad> {
        match self {
            Primitive::Quad(q) => vec![q.clone()],
            Primitive::Box {
                center,
                half_extents: h,
                class,
            } => {
                let lo = center - h;
                let (ex, ey, ez) = (Vector3::x() * 2.0 * h.x, Vector3::y() * 2.0 * h.y, Vector3::z() * 2.0 * h.z);
                let face = |origin: Vector3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>| Quad {
                    origin,
                    edge_u,
                    edge_v,
                    class: *class,
                };
                vec![
                    face(lo, ey, ez),
                    face(lo + ex, ey, ez),
                    face(lo, ex, ez),
                    face(lo + ey, ex, ez),
                    face(lo, ex, ey),
                    face(lo + ez, ex, ey),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub intrinsics: Intrinsics,
    pub classes: Vec<String>,
    pub primitives: Vec<Primitive>,
    /// Camera-to-world poses, one keyframe each.
    pub poses: Vec<Sim3Pose>,
    /// Standard deviation of additive depth noise, metres.
    pub depth_noise: f64,
    /// Fraction of semi-dense pixels whose scores name a wrong class.
    pub corruption: f64,
    /// Weight `η` of the per-class uniform noise added to the one-hot score.
    pub score_noise: f64,
    /// Constant `λ` added to every class score before normalization; larger
    /// values give less confident score maps without changing their argmax.
    pub score_floor: f64,
    /// Checkerboard square size, metres.
    pub checker_size: f64,
    pub gradient_threshold: f64,
    pub seed: u64,
}

/// Camera-to-world pose at `eye` looking at `target`, image `y` pointing
/// along `-up`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Sim3Pose {
    let z = (target - eye).normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Sim3Pose::from_parts(UnitQuaternion::from_rotation_matrix(&r), eye, 1.0).expect("finite look-at pose")
}

impl SceneSpec {
    /// Two planes at about one metre opening towards the cameras like a
    /// book, each turned 30° about the vertical axis, swept by five keyframes.
    pub fn two_planes(seed: u64) -> Self {
        let intrinsics = Intrinsics::new(90.0, 90.0, 47.5, 35.5, 96, 72).expect("valid intrinsics");
        let (c, s) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
        let left = Quad {
            origin: Vector3::new(-0.06, -0.2, 1.2),
            edge_u: Vector3::new(-0.32 * c, 0.0, -0.32 * s),
            edge_v: Vector3::new(0.0, 0.4, 0.0),
            class: 0,
        };
        let right = Quad {
            origin: Vector3::new(0.06, -0.2, 1.2),
            edge_u: Vector3::new(0.32 * c, 0.0, -0.32 * s),
            edge_v: Vector3::new(0.0, 0.4, 0.0),
            class: 1,
        };
        let target = Vector3::new(0.0, 0.0, 1.2);
        let poses = [-0.08, -0.04, 0.0, 0.04, 0.08]
            .iter()
            .map(|&dx| look_at(Vector3::new(dx, 0.5 * dx, 0.0), target, -Vector3::y()))
            .collect();
        Self {
            intrinsics,
            classes: vec!["left".into(), "right".into()],
            primitives: vec![Primitive::Quad(left), Primitive::Quad(right)],
            poses,
            depth_noise: 0.002,
            corruption: 0.3,
            score_noise: 1.0,
            score_floor: 1.0,
            checker_size: 0.06,
            gradient_threshold: crate::keyframe::DEFAULT_GRADIENT_THRESHOLD,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |msg: String| Err(EvalError::InvalidSpec(msg));
        self.intrinsics.validate().map_err(|e| EvalError::InvalidSpec(e.to_string()))?;
        if self.primitives.is_empty() {
            return bad("scene has no primitives".into());
        }
        if self.poses.is_empty() {
            return bad("scene has no poses".into());
        }
        let m = self.classes.len();
        if !(2..VOID as usize).contains(&m) {
            return bad(format!("{m} classes, expected 2..255"));
        }
        for p in &self.primitives {
            for f in p.faces() {
                if f.class >= m {
                    return bad(format!("primitive class {} out of range", f.class));
                }
                if f.edge_u.cross(&f.edge_v).norm() == 0.0 || f.edge_u.dot(&f.edge_v).abs() > 1e-9 * f.edge_u.norm() * f.edge_v.norm() {
                    return bad("quad edges must be non-zero and orthogonal".into());
                }
            }
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return bad(format!("corruption {} outside [0, 1]", self.corruption));
        }
        if !(0.0..=1.0).contains(&self.score_noise) {
            return bad(format!("score noise {} outside [0, 1]", self.score_noise));
        }
        if !(self.score_floor.is_finite() && self.score_floor >= 0.0) {
            return bad("score floor must be >= 0".into());
        }
        if !(self.depth_noise.is_finite() && self.depth_noise >= 0.0) {
            return bad("depth noise must be >= 0".into());
        }
        if !(self.checker_size.is_finite() && self.checker_size > 0.0) {
            return bad("checker size must be positive".into());
        }
        Ok(())
    }
}

/// Lower bound on reported depth variance.
pub const VARIANCE_FLOOR: f64 = 1e-4;
const BACKGROUND: f32 = 0.5;
const CHECKER_LO: f32 = 0.3;
const CHECKER_HI: f32 = 0.7;
const PALETTE: [[f32; 3]; 4] = [[0.9, 0.35, 0.25], [0.25, 0.55, 0.9], [0.35, 0.8, 0.35], [0.85, 0.75, 0.3]];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    /// Keyframe with depth restricted to the semi-dense mask.
    pub keyframe: Keyframe,
    /// Unnormalized scores as written to disk.
    pub raw_scores: ScoreTensor,
    pub mask: Mask,
    /// True class wherever a primitive is visible, void elsewhere.
    pub ground_truth: LabelImage,
    /// Masked pixels whose scores were replaced by a wrong class.
    pub corrupted: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub intrinsics: Intrinsics,
    pub classes: Vec<String>,
    pub frames: Vec<SynthFrame>,
}

/// Files written by [`SynthScene::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub manifest: PathBuf,
    pub ground_truth: Vec<PathBuf>,
}

impl SynthScene {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &Keyframe> {
        self.frames.iter().map(|f| &f.keyframe)
    }

    /// Writes bundles `kf000_*`, ground-truth images `kf000_gt.png` and
    /// `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<SceneFiles, EvalError> {
        fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut keyframes = Vec::with_capacity(self.frames.len());
        let mut ground_truth = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            let stem = format!("kf{:03}", f.keyframe.index());
            keyframes.push(write_keyframe_bundle(&f.keyframe, &f.raw_scores, dir, &stem)?);
            let gt = dir.join(format!("{stem}_gt.png"));
            write_label_image(&gt, &f.ground_truth)?;
            ground_truth.push(gt);
        }
        let manifest = SequenceManifest {
            intrinsics: self.intrinsics,
            classes: self.classes.clone(),
            keyframes,
        };
        let path = dir.join("manifest.json");
        manifest.write(&path)?;
        Ok(SceneFiles {
            manifest: path,
            ground_truth,
        })
    }
}

struct Hit {
    depth: f64,
    class: usize,
    shade: f32,
}

fn intersect(face: &Quad, eye: &Vector3<f64>, dir: &Vector3<f64>, checker: f64) -> Option<(f64, f32)> {
    let n = face.edge_u.cross(&face.edge_v);
    let denom = n.dot(dir);
    if denom == 0.0 {
        return None;
    }
    let t = n.dot(&(face.origin - eye)) / denom;
    if !(t > 0.0) {
        return None;
    }
    let q = eye + dir * t - face.origin;
    let a = q.dot(&face.edge_u) / face.edge_u.norm_squared();
    let b = q.dot(&face.edge_v) / face.edge_v.norm_squared();
    if !((0.0..1.0).contains(&a) && (0.0..1.0).contains(&b)) {
        return None;
    }
    let cu = (a * face.edge_u.norm() / checker).floor() as i64;
    let cv = (b * face.edge_v.norm() / checker).floor() as i64;
    let shade = if (cu + cv).rem_euclid(2) == 0 { CHECKER_LO } else { CHECKER_HI };
    Some((t, shade))
}

/// Nearest surface along each pixel ray; `depth` is camera z-depth since the
/// ray direction has unit camera-z component.
fn render_hits(spec: &SceneSpec, faces: &[Quad], pose: &Sim3Pose) -> Vec<Option<Hit>> {
    let k = &spec.intrinsics;
    let eye = pose.center();
    let rs = pose.rotation().to_rotation_matrix().into_inner() * pose.scale();
    let mut hits = Vec::with_capacity(k.width * k.height);
    for y in 0..k.height {
        for x in 0..k.width {
            let ray_cam = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let dir = rs * ray_cam;
            let mut best: Option<Hit> = None;
            for f in faces {
                if let Some((t, shade)) = intersect(f, &eye, &dir, spec.checker_size) {
                    if best.as_ref().is_none_or(|b| t < b.depth) {
                        best = Some(Hit {
                            depth: t,
                            class: f.class,
                            shade,
                        });
                    }
                }
            }
            hits.push(best);
        }
    }
    hits
}

fn quantize(v: f32) -> f32 {
    crate::keyframe::quantize_unit(v) as f32 / 255.0
}

pub fn synth_scene(spec: &SceneSpec) -> Result<SynthScene, EvalError> {
    spec.validate()?;
    let k = spec.intrinsics;
    let (w, h) = (k.width, k.height);
    let m = spec.classes.len();
    let faces: Vec<Quad> = spec.primitives.iter().flat_map(Primitive::faces).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Gaussian::new(0.0, spec.depth_noise).map_err(|e| EvalError::InvalidSpec(e.to_string()))?;
    let variance = (spec.depth_noise * spec.depth_noise + VARIANCE_FLOOR) as f32;
    let mut any_visible = false;
    let mut frames = Vec::with_capacity(spec.poses.len());
    for (index, pose) in spec.poses.iter().enumerate() {
        let hits = render_hits(spec, &faces, pose);
        any_visible |= hits.iter().any(Option::is_some);

        let mut intensity = Raster::filled(w, h, 1, BACKGROUND);
        let mut color = Raster::filled(w, h, 3, quantize(BACKGROUND));
        let mut ground_truth: LabelImage = Raster::filled(w, h, 1, VOID);
        for (p, hit) in hits.iter().enumerate() {
            let (x, y) = (p % w, p / w);
            if let Some(hit) = hit {
                intensity.set(x, y, hit.shade);
                let base = PALETTE[hit.class % PALETTE.len()];
                let px = color.pixel_mut(x, y);
                for c in 0..3 {
                    px[c] = quantize(base[c] * (0.5 + hit.shade));
                }
                ground_truth.set(x, y, hit.class as u8);
            }
        }
        let gradient = semi_dense_mask(&intensity, spec.gradient_threshold);
        let mut mask: Mask = Raster::filled(w, h, 1, false);
        let mut corrupted: Mask = Raster::filled(w, h, 1, false);
        let mut depth = Raster::filled(w, h, 1, 0.0f32);
        let mut scores = vec![1.0f32; w * h * m];
        for (p, hit) in hits.iter().enumerate() {
            let (x, y) = (p % w, p / w);
            let Some(hit) = hit else { continue };
            let masked = gradient.get(x, y);
            let mut label = hit.class;
            if masked {
                let d = hit.depth + noise.sample(&mut rng);
                if d > 0.0 {
                    mask.set(x, y, true);
                    depth.set(x, y, d as f32);
                }
                if rng.random::<f64>() < spec.corruption {
                    let shift = rng.random_range(1..m);
                    label = (label + shift) % m;
                    corrupted.set(x, y, true);
                }
            }
            for (c, s) in scores[p * m..(p + 1) * m].iter_mut().enumerate() {
                let onehot = if c == label { 1.0 } else { 0.0 };
                *s = (onehot + spec.score_floor + spec.score_noise * rng.random::<f64>()) as f32;
            }
        }
        let raw_scores = ScoreTensor {
            height: h,
            width: w,
            classes: m,
            data: scores,
        };
        let full = Keyframe::new(KeyframeParts {
            index,
            intensity,
            color,
            depth,
            variance: Raster::filled(w, h, 1, variance),
            scores: raw_scores.clone(),
            pose: *pose,
            intrinsics: k,
        })?;
        let keyframe = apply_mask(&full, &mask)?;
        frames.push(SynthFrame {
            keyframe,
            raw_scores,
            mask,
            ground_truth,
            corrupted,
        });
    }
    if !any_visible {
        return Err(EvalError::DegenerateSpec);
    }
    Ok(SynthScene {
        intrinsics: k,
        classes: spec.classes.clone(),
        frames,
    })
}
