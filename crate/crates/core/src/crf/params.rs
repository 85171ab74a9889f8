use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CrfError;

/// Label compatibility for one pairwise kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Compatibility {
    /// `1` when labels differ, `0` otherwise.
    Potts,
    /// Symmetric `M x M` matrix with zero diagonal, row-major.
    Matrix { classes: usize, values: Vec<f64> },
}

impl Compatibility {
    /// Potts-valued matrix: 1 off the diagonal, 0 on it.
    pub fn potts_matrix(classes: usize) -> Self {
        let values = (0..classes * classes)
            .map(|k| if k / classes == k % classes { 0.0 } else { 1.0 })
            .collect();
        Compatibility::Matrix { classes, values }
    }

    pub fn from_matrix(classes: usize, values: Vec<f64>) -> Result<Self, CrfError> {
        if values.len() != classes * classes {
            return Err(CrfError::InvalidCompatibility(format!(
                "expected {} entries, found {}",
                classes * classes,
                values.len()
            )));
        }
        for i in 0..classes {
            for j in 0..classes {
                let v = values[i * classes + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(CrfError::InvalidCompatibility(format!("entry ({i},{j}) = {v} must be non-negative")));
                }
                if i == j && v != 0.0 {
                    return Err(CrfError::InvalidCompatibility(format!("diagonal entry ({i},{i}) = {v} must be zero")));
                }
                if (v - values[j * classes + i]).abs() > 1e-12 {
                    return Err(CrfError::InvalidCompatibility(format!("matrix is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Compatibility::Matrix { classes, values })
    }

    /// Reads an `M x M` CSV (comma separated, no header).
    pub fn read_csv(path: &Path, classes: usize) -> Result<Self, CrfError> {
        let text = fs::read_to_string(path).map_err(|e| CrfError::InvalidCompatibility(format!("{}: {e}", path.display())))?;
        let mut values = Vec::with_capacity(classes * classes);
        let mut rows = 0;
        for (r, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rows += 1;
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != classes {
                return Err(CrfError::InvalidCompatibility(format!(
                    "{}: row {} has {} columns, expected {classes}",
                    path.display(),
                    r + 1,
                    cells.len()
                )));
            }
            for c in cells {
                let v: f64 = c
                    .parse()
                    .map_err(|_| CrfError::InvalidCompatibility(format!("{}: bad number {c:?}", path.display())))?;
                values.push(v);
            }
        }
        if rows != classes {
            return Err(CrfError::InvalidCompatibility(format!(
                "{}: {rows} rows, expected {classes}",
                path.display()
            )));
        }
        Self::from_matrix(classes, values).map_err(|e| match e {
            CrfError::InvalidCompatibility(msg) => CrfError::InvalidCompatibility(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    #[inline]
    pub fn value(&self, li: usize, lj: usize) -> f64 {
        match self {
            Compatibility::Potts => {
                if li == lj {
                    0.0
                } else {
                    1.0
                }
            }
            Compatibility::Matrix { classes, values } => values[li * classes + lj],
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match self {
            Compatibility::Potts => None,
            Compatibility::Matrix { classes, .. } => Some(*classes),
        }
    }
}

/// Kernel weights and bandwidths, without the class-dependent matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSettings {
    pub w1: f64,
    pub w2: f64,
    pub w_app: f64,
    pub theta_pn: f64,
    pub theta_n: f64,
    pub theta_pc: f64,
    pub theta_c: f64,
    pub theta_ps: f64,
    pub theta_s: f64,
    pub iterations: usize,
    pub convergence_tol: f64,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w_app: 0.0,
            theta_pn: 0.3,
            theta_n: 0.2,
            theta_pc: 0.3,
            theta_c: 0.2,
            theta_ps: 3.0,
            theta_s: 0.5,
            iterations: 10,
            convergence_tol: 1e-4,
        }
    }
}

/// Dense CRF parameters.
///
/// Kernel 1 (smoothness) acts on position and normal, kernel 2 (semantic)
/// on position and score vector, the appearance kernel on position and
/// colour. Kernels 1 and appearance use Potts compatibility; kernel 2 uses
/// `mu2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    settings: KernelSettings,
    mu2: Compatibility,
}

impl CrfParams {
    pub fn new(settings: KernelSettings, mu2: Compatibility) -> Result<Self, CrfError> {
        let s = &settings;
        let thetas = [
            ("theta_pn", s.theta_pn),
            ("theta_n", s.theta_n),
            ("theta_pc", s.theta_pc),
            ("theta_c", s.theta_c),
            ("theta_ps", s.theta_ps),
            ("theta_s", s.theta_s),
        ];
        for (name, v) in thetas {
            if !(v.is_finite() && v > 0.0) {
                return Err(CrfError::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("w1", s.w1), ("w2", s.w2), ("w_app", s.w_app)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CrfError::InvalidParams(format!("{name} = {v} must be non-negative")));
            }
        }
        if s.theta_ps <= s.theta_pn {
            return Err(CrfError::InvalidParams(format!(
                "theta_ps ({}) must exceed theta_pn ({})",
                s.theta_ps, s.theta_pn
            )));
        }
        if !(s.convergence_tol.is_finite() && s.convergence_tol >= 0.0) {
            return Err(CrfError::InvalidParams("convergence_tol must be >= 0".into()));
        }
        if let Compatibility::Matrix { classes, values } = &mu2 {
            Compatibility::from_matrix(*classes, values.clone())?;
        }
        Ok(Self { settings, mu2 })
    }

    /// Default settings with a Potts-valued `mu2` for `classes` labels.
    pub fn defaults(classes: usize) -> Self {
        Self::new(KernelSettings::default(), Compatibility::potts_matrix(classes)).expect("defaults are valid")
    }

    pub fn settings(&self) -> &KernelSettings {
        &self.settings
    }

    pub fn mu2(&self) -> &Compatibility {
        &self.mu2
    }

    pub fn iterations(&self) -> usize {
        self.settings.iterations
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.settings.iterations = iterations;
        self
    }

    /// Same parameters with every kernel weight set to zero.
    pub fn decoupled(mut self) -> Self {
        self.settings.w1 = 0.0;
        self.settings.w2 = 0.0;
        self.settings.w_app = 0.0;
        self
    }

    pub(crate) fn check_classes(&self, classes: usize) -> Result<(), CrfError> {
        match self.mu2.classes() {
            Some(m) if m != classes => Err(CrfError::InvalidCompatibility(format!(
                "compatibility matrix is {m}x{m} but the map has {classes} classes"
            ))),
            _ => Ok(()),
        }
    }
}
