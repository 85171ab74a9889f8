use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExportMode, PipelineError};
use crate::crf::{Compatibility, CrfParams, KernelSettings};
use crate::fusion::AssociationGate;
use crate::geometry::DEFAULT_NORMAL_K;
use crate::keyframe::DEFAULT_GRADIENT_THRESHOLD;

/// Batch driver configuration, read from JSON with these field names.
/// Relative paths in a config file are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub gradient_threshold: f64,
    pub gate: AssociationGate,
    pub crf: KernelSettings,
    /// Optional `M x M` semantic compatibility CSV; Potts-valued otherwise.
    pub mu2_csv: Option<PathBuf>,
    pub normal_k: usize,
    pub output: PathBuf,
    pub export_mode: ExportMode,
    pub evaluate: bool,
    /// One label image per manifest keyframe, in manifest order.
    pub ground_truth: Vec<PathBuf>,
    /// Lattice-filtered message passing; not built, so `true` is an error.
    pub fast_filter: bool,
    /// Worker threads; the machine default when absent.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            gradient_threshold: DEFAULT_GRADIENT_THRESHOLD,
            gate: AssociationGate::default(),
            crf: KernelSettings::default(),
            mu2_csv: None,
            normal_k: DEFAULT_NORMAL_K,
            output: PathBuf::from("out"),
            export_mode: ExportMode::Argmax,
            evaluate: false,
            ground_truth: Vec::new(),
            fast_filter: false,
            threads: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::io(path, source))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        resolve(base, &mut cfg.manifest);
        resolve(base, &mut cfg.output);
        if let Some(p) = cfg.mu2_csv.as_mut() {
            resolve(base, p);
        }
        for p in &mut cfg.ground_truth {
            resolve(base, p);
        }
        Ok(cfg)
    }

    /// Writes the config as pretty JSON, paths as stored.
    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text + "\n").map_err(|source| PipelineError::io(path, source))
    }

    /// Checks settings that do not need the manifest.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.fast_filter {
            return Err(PipelineError::Config(
                "fast_filter is not available in this build; use the direct message passing".into(),
            ));
        }
        if !(self.gradient_threshold >= 0.0) {
            return Err(PipelineError::Config(format!(
                "gradient_threshold {} must be >= 0",
                self.gradient_threshold
            )));
        }
        if self.normal_k < 3 {
            return Err(PipelineError::Config(format!("normal_k {} must be at least 3", self.normal_k)));
        }
        if self.threads == Some(0) {
            return Err(PipelineError::Config("threads must be positive".into()));
        }
        self.gate.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        CrfParams::new(self.crf, Compatibility::Potts).map_err(|e| PipelineError::Config(e.to_string()))?;
        for p in [Some(&self.manifest), self.mu2_csv.as_ref()].into_iter().flatten() {
            if !p.exists() {
                return Err(PipelineError::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.evaluate {
            if self.ground_truth.is_empty() {
                return Err(PipelineError::Config("evaluate is set but no ground_truth images are listed".into()));
            }
            if let Some(p) = self.ground_truth.iter().find(|p| !p.exists()) {
                return Err(PipelineError::Config(format!("ground truth {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// CRF parameters for `classes` labels, reading `mu2_csv` if set.
    pub fn crf_params(&self, classes: usize) -> Result<CrfParams, PipelineError> {
        let mu2 = match &self.mu2_csv {
            Some(p) => Compatibility::read_csv(p, classes).map_err(|source| PipelineError::Crf { path: p.clone(), source })?,
            None => Compatibility::potts_matrix(classes),
        };
        CrfParams::new(self.crf, mu2).map_err(|e| PipelineError::Config(e.to_string()))
    }
}
