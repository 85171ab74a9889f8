use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EvalError, LabelImage, VOID};

/// Counts indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Option<Self> {
        (counts.len() == classes * classes).then_some(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, gt: usize) -> u64 {
        self.counts[gt * self.classes..(gt + 1) * self.classes].iter().sum()
    }

    pub fn add(&mut self, gt: usize, pred: usize) {
        self.counts[gt * self.classes + pred] += 1;
    }

    /// Element-wise sum; both matrices must have the same class count.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if other.classes != self.classes {
            return Err(EvalError::ClassCountMismatch {
                expected: self.classes,
                found: other.classes,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Accumulates every pixel where neither image is void.
pub fn confusion_matrix(pred: &LabelImage, gt: &LabelImage, classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if pred.dims() != gt.dims() {
        return Err(EvalError::DimensionMismatch {
            expected: gt.dims(),
            found: pred.dims(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p == VOID || g == VOID {
            continue;
        }
        for label in [p, g] {
            if label as usize >= classes {
                return Err(EvalError::LabelOutOfRange {
                    label: label as usize,
                    classes,
                });
            }
        }
        cm.add(g as usize, p as usize);
    }
    Ok(cm)
}

/// Percentages derived from a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Recall per ground-truth class; `None` for classes with no pixels.
    pub per_class: Vec<Option<f64>>,
    pub class_avg: f64,
    pub pixel_avg: f64,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let per_class: Vec<Option<f64>> = (0..cm.classes())
        .map(|c| {
            let row = cm.row_sum(c);
            (row > 0).then(|| 100.0 * cm.get(c, c) as f64 / row as f64)
        })
        .collect();
    Ok(Metrics {
        class_avg: class_average(&per_class),
        pixel_avg: 100.0 * cm.trace() as f64 / total as f64,
        per_class,
    })
}

/// Mean of the defined entries.
pub fn class_average(per_class: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    defined.iter().sum::<f64>() / defined.len() as f64
}

/// `class,accuracy` CSV, then `class_avg` and `pixel_avg` rows. Undefined
/// per-class accuracies are written as `nan`.
pub fn metrics_csv(m: &Metrics, class_names: &[String]) -> String {
    let mut out = String::from("class,accuracy\n");
    for (c, acc) in m.per_class.iter().enumerate() {
        let name = class_names.get(c).cloned().unwrap_or_else(|| format!("class_{c}"));
        match acc {
            Some(a) => writeln!(out, "{name},{a:.1}").unwrap(),
            None => writeln!(out, "{name},nan").unwrap(),
        }
    }
    writeln!(out, "class_avg,{:.1}", m.class_avg).unwrap();
    writeln!(out, "pixel_avg,{:.1}", m.pixel_avg).unwrap();
    out
}

pub fn write_metrics_csv(path: &Path, m: &Metrics, class_names: &[String]) -> Result<(), EvalError> {
    fs::write(path, metrics_csv(m, class_names)).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
