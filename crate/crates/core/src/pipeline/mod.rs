//! Batch driver: manifest → fusion → CRF → PLY export and metrics.
//!
//! Keyframes are integrated sequentially in manifest order and the finished
//! map is regularized once. Each stage can also run on its own, exchanging
//! the fused map through `map.sdsm` and the labels through `map.ply`; the
//! staged and end-to-end paths produce byte-identical files.
//!
//! Output directory contents: `map.sdsm`, `map.ply`, `metrics.csv` (when
//! evaluating) and `report.json`.

mod config;
mod intermediate;
mod ply;

pub use config::PipelineConfig;
pub use intermediate::{decode_map, encode_map, read_map, write_map, SDSM_MAGIC, SDSM_VERSION};
pub use ply::{decode_ply, encode_ply, export_ply, label_color, read_ply, ExportMode, PlyVertex, PALETTE};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crf::{regularize, CrfError, Regularization};
use crate::eval::{
    backproject_labels, confusion_matrix, depth_domain, metrics, read_label_image, restrict_to_mask, write_metrics_csv, ConfusionMatrix, EvalError,
    Metrics, SceneSpec, SynthScene,
};
use crate::fusion::{FusionError, SemanticMap};
use crate::keyframe::{apply_mask, load_keyframe_bundle, semi_dense_mask, Keyframe, KeyframeError, SequenceManifest};

pub const MAP_FILE: &str = "map.sdsm";
pub const PLY_FILE: &str = "map.ply";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Keyframe(#[from] KeyframeError),
    #[error("keyframe {index}: {source}")]
    Fusion { index: usize, source: FusionError },
    #[error("{}: {source}", path.display())]
    Crf { path: PathBuf, source: CrfError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{}: {reason}", path.display())]
    Data { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: intermediate version {found}, expected {expected}", path.display())]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{}: corrupt intermediate map: {reason}", path.display())]
    CorruptIntermediate { path: PathBuf, reason: String },
    #[error("{}: {reason}", path.display())]
    Ply { path: PathBuf, reason: String },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 1 usage/configuration, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Crf {
                source: CrfError::NumericFailure(_),
                ..
            } => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeStats {
    pub index: usize,
    pub associated: usize,
    pub created: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationReport {
    pub iterations_used: usize,
    pub converged: bool,
    pub last_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub per_class: Vec<Option<f64>>,
    pub class_avg: f64,
    pub pixel_avg: f64,
    pub pixels: u64,
}

impl MetricsSummary {
    fn new(m: &Metrics, cm: &ConfusionMatrix) -> Self {
        Self {
            per_class: m.per_class.clone(),
            class_avg: m.class_avg,
            pixel_avg: m.pixel_avg,
            pixels: cm.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Labels as fused, before the CRF.
    pub pre_crf: MetricsSummary,
    pub post_crf: MetricsSummary,
}

/// Contents of `report.json`. Staged commands fill in their own sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunReport {
    pub points: usize,
    pub keyframes_integrated: usize,
    pub fusion: Vec<KeyframeStats>,
    pub regularization: Option<RegularizationReport>,
    pub evaluation: Option<EvaluationReport>,
    pub wall_time_s: f64,
}

impl RunReport {
    fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&path, text + "\n").map_err(|source| PipelineError::io(&path, source))
    }

    /// The existing report in `dir`, or an empty one.
    fn existing(dir: &Path) -> RunReport {
        fs::read_to_string(dir.join(REPORT_FILE))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }
}

fn with_threads<T: Send>(cfg: &PipelineConfig, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    match cfg.threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| PipelineError::Config(format!("cannot start {n} threads: {e}"))),
    }
}

fn create_output(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::io(dir, source))
}

/// Loads one manifest entry and restricts its depth to the gradient mask.
fn load_masked(manifest: &SequenceManifest, i: usize, threshold: f64) -> Result<Keyframe, PipelineError> {
    let entry = &manifest.keyframes[i];
    let kf = load_keyframe_bundle(entry, &manifest.intrinsics)?;
    let mask = semi_dense_mask(kf.intensity(), threshold);
    Ok(apply_mask(&kf, &mask)?)
}

/// Result of the fusion stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub manifest: SequenceManifest,
    pub map: SemanticMap,
    pub stats: Vec<KeyframeStats>,
}

/// Integrates every manifest keyframe in order and computes normals.
pub fn fuse(cfg: &PipelineConfig) -> Result<Fused, PipelineError> {
    let manifest = SequenceManifest::load(&cfg.manifest)?;
    let mut map = SemanticMap::new(manifest.num_classes());
    let mut stats = Vec::with_capacity(manifest.keyframes.len());
    for i in 0..manifest.keyframes.len() {
        let kf = load_masked(&manifest, i, cfg.gradient_threshold)?;
        let s = map
            .integrate_keyframe(&kf, &cfg.gate)
            .map_err(|source| PipelineError::Fusion { index: kf.index(), source })?;
        stats.push(KeyframeStats {
            index: kf.index(),
            associated: s.associated,
            created: s.created,
        });
    }
    let last = manifest.keyframes.last().map_or(0, |e| e.index);
    map.ensure_normals(cfg.normal_k)
        .map_err(|source| PipelineError::Fusion { index: last, source })?;
    Ok(Fused { manifest, map, stats })
}

/// Runs the CRF on `map`; `source` names the map in error messages.
pub fn regularize_map(map: &SemanticMap, cfg: &PipelineConfig, source: &Path) -> Result<Regularization, PipelineError> {
    if map.is_empty() {
        return Err(PipelineError::Data {
            path: source.to_path_buf(),
            reason: "map has no points".into(),
        });
    }
    let params = cfg.crf_params(map.num_classes())?;
    regularize(map, &params).map_err(|e| match e {
        CrfError::InvalidParams(msg) => PipelineError::Config(msg),
        e => PipelineError::Crf {
            path: source.to_path_buf(),
            source: e,
        },
    })
}

/// Per-point label and its marginal probability.
pub fn labels_with_confidence(reg: &Regularization) -> (Vec<usize>, Vec<f64>) {
    let conf = reg.labels.iter().enumerate().map(|(i, &l)| reg.field.row(i)[l]).collect();
    (reg.labels.clone(), conf)
}

/// Backprojects `labels` into every keyframe and scores the semi-dense
/// pixels against the configured ground truth.
pub fn evaluate_labels(
    cfg: &PipelineConfig,
    manifest: &SequenceManifest,
    map: &SemanticMap,
    labels: &[usize],
) -> Result<(Metrics, ConfusionMatrix), PipelineError> {
    if cfg.ground_truth.len() != manifest.keyframes.len() {
        return Err(PipelineError::Data {
            path: cfg.manifest.clone(),
            reason: format!(
                "{} ground-truth images for {} keyframes",
                cfg.ground_truth.len(),
                manifest.keyframes.len()
            ),
        });
    }
    let m = manifest.num_classes();
    let mut cm = ConfusionMatrix::new(m);
    for (i, gt_path) in cfg.ground_truth.iter().enumerate() {
        let kf = load_masked(manifest, i, cfg.gradient_threshold)?;
        let gt = read_label_image(gt_path)?;
        let gt = restrict_to_mask(&gt, &depth_domain(&kf)).map_err(|e| PipelineError::Data {
            path: gt_path.clone(),
            reason: e.to_string(),
        })?;
        let pred = backproject_labels(map, labels, &kf);
        let frame = confusion_matrix(&pred, &gt, m).map_err(|e| PipelineError::Data {
            path: gt_path.clone(),
            reason: e.to_string(),
        })?;
        cm.merge(&frame)?;
    }
    let summary = metrics(&cm).map_err(|e| PipelineError::Data {
        path: cfg.manifest.clone(),
        reason: e.to_string(),
    })?;
    Ok((summary, cm))
}

fn evaluation(
    cfg: &PipelineConfig,
    manifest: &SequenceManifest,
    map: &SemanticMap,
    labels: &[usize],
) -> Result<(Metrics, EvaluationReport), PipelineError> {
    let (pre, pre_cm) = evaluate_labels(cfg, manifest, map, &map.argmax_labels())?;
    let (post, post_cm) = evaluate_labels(cfg, manifest, map, labels)?;
    let report = EvaluationReport {
        pre_crf: MetricsSummary::new(&pre, &pre_cm),
        post_crf: MetricsSummary::new(&post, &post_cm),
    };
    Ok((post, report))
}

fn check_labels(labels: &[usize], classes: usize, path: &Path) -> Result<(), PipelineError> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(PipelineError::Ply {
            path: path.to_path_buf(),
            reason: format!("label {l} out of range for {classes} classes"),
        }),
        None => Ok(()),
    }
}

/// End-to-end run; writes every output file.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    cfg.validate()?;
    with_threads(cfg, || {
        let fused = fuse(cfg)?;
        create_output(&cfg.output)?;
        let map_path = cfg.output.join(MAP_FILE);
        write_map(&map_path, &fused.map)?;
        let reg = regularize_map(&fused.map, cfg, &map_path)?;
        let (labels, conf) = labels_with_confidence(&reg);
        export_ply(&cfg.output.join(PLY_FILE), &fused.map, &labels, &conf, cfg.export_mode)?;
        let mut report = RunReport {
            points: fused.map.len(),
            keyframes_integrated: fused.stats.len(),
            fusion: fused.stats.clone(),
            regularization: Some(RegularizationReport {
                iterations_used: reg.iterations_used,
                converged: reg.converged,
                last_change: reg.last_change,
            }),
            ..Default::default()
        };
        if cfg.evaluate {
            let (post, eval) = evaluation(cfg, &fused.manifest, &fused.map, &labels)?;
            write_metrics_csv(&cfg.output.join(METRICS_FILE), &post, &fused.manifest.classes)?;
            report.evaluation = Some(eval);
        }
        report.wall_time_s = start.elapsed().as_secs_f64();
        report.write(&cfg.output)?;
        Ok(report)
    })?
}

/// Fusion stage alone: writes `map.sdsm` and starts a fresh report.
pub fn cmd_fuse(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    cfg.validate()?;
    with_threads(cfg, || {
        let fused = fuse(cfg)?;
        create_output(&cfg.output)?;
        write_map(&cfg.output.join(MAP_FILE), &fused.map)?;
        let report = RunReport {
            points: fused.map.len(),
            keyframes_integrated: fused.stats.len(),
            fusion: fused.stats,
            wall_time_s: start.elapsed().as_secs_f64(),
            ..Default::default()
        };
        report.write(&cfg.output)?;
        Ok(report)
    })?
}

/// CRF stage alone: reads `input` (default `<output>/map.sdsm`), writes
/// `map.ply`.
pub fn cmd_regularize(cfg: &PipelineConfig, input: Option<&Path>) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    if cfg.fast_filter {
        cfg.validate()?;
    }
    let map_path = input.map_or_else(|| cfg.output.join(MAP_FILE), Path::to_path_buf);
    with_threads(cfg, || {
        let map = read_map(&map_path)?;
        let reg = regularize_map(&map, cfg, &map_path)?;
        let (labels, conf) = labels_with_confidence(&reg);
        create_output(&cfg.output)?;
        export_ply(&cfg.output.join(PLY_FILE), &map, &labels, &conf, cfg.export_mode)?;
        let mut report = RunReport::existing(&cfg.output);
        report.points = map.len();
        report.regularization = Some(RegularizationReport {
            iterations_used: reg.iterations_used,
            converged: reg.converged,
            last_change: reg.last_change,
        });
        report.evaluation = None;
        report.wall_time_s += start.elapsed().as_secs_f64();
        report.write(&cfg.output)?;
        Ok(report)
    })?
}

/// Evaluation stage alone: scores the labels in `map.ply` (and the fused
/// argmax from `map.sdsm`) and writes `metrics.csv`.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    let cfg = PipelineConfig {
        evaluate: true,
        ..cfg.clone()
    };
    cfg.validate()?;
    let manifest = SequenceManifest::load(&cfg.manifest)?;
    let map_path = cfg.output.join(MAP_FILE);
    let ply_path = cfg.output.join(PLY_FILE);
    let map = read_map(&map_path)?;
    let vertices = read_ply(&ply_path)?;
    if vertices.len() != map.len() {
        return Err(PipelineError::Ply {
            path: ply_path,
            reason: format!("{} vertices but {} has {} points", vertices.len(), map_path.display(), map.len()),
        });
    }
    let labels: Vec<usize> = vertices.iter().map(|v| v.label as usize).collect();
    check_labels(&labels, map.num_classes(), &ply_path)?;
    let (post, eval) = with_threads(&cfg, || evaluation(&cfg, &manifest, &map, &labels))??;
    write_metrics_csv(&cfg.output.join(METRICS_FILE), &post, &manifest.classes)?;
    let mut report = RunReport::existing(&cfg.output);
    report.evaluation = Some(eval);
    report.wall_time_s += start.elapsed().as_secs_f64();
    report.write(&cfg.output)?;
    Ok(report)
}

/// Writes a synthetic scene to `dir` together with a `config.json` that
/// evaluates it into `dir/run`.
pub fn cmd_synth(spec: &SceneSpec, dir: &Path) -> Result<(SynthScene, PathBuf), PipelineError> {
    let scene = crate::eval::synth_scene(spec)?;
    let files = scene.write(dir)?;
    let rel = |p: &Path| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    let cfg = PipelineConfig {
        manifest: rel(&files.manifest),
        gradient_threshold: spec.gradient_threshold,
        output: PathBuf::from("run"),
        evaluate: true,
        ground_truth: files.ground_truth.iter().map(|p| rel(p)).collect(),
        ..Default::default()
    };
    let path = dir.join("config.json");
    cfg.write(&path)?;
    Ok((scene, path))
}
