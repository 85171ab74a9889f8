//! Gaussian edge potentials and label compatibilities.

use super::{CrfError, CrfParams};
use crate::fusion::{MapPoint, SemanticMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// Position and surface normal.
    Smoothness,
    /// Position and colour.
    Appearance,
    /// Position and class-score vector.
    Semantic,
}

#[inline]
fn gaussian(weight: f64, d2_pos: f64, theta_pos: f64, d2_feat: f64, theta_feat: f64) -> f64 {
    weight * (-d2_pos / (2.0 * theta_pos * theta_pos) - d2_feat / (2.0 * theta_feat * theta_feat)).exp()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kernel_smoothness(fi: &MapPoint, fj: &MapPoint, params: &CrfParams) -> Result<f64, CrfError> {
    let (Some(ni), Some(nj)) = (fi.normal.get(), fj.normal.get()) else {
        return Err(CrfError::InvalidNormal);
    };
    let s = params.settings();
    Ok(gaussian(
        s.w1,
        (fi.position - fj.position).norm_squared(),
        s.theta_pn,
        (ni - nj).norm_squared(),
        s.theta_n,
    ))
}

/// Uses RGB colour distance.
pub fn kernel_appearance(fi: &MapPoint, fj: &MapPoint, params: &CrfParams) -> f64 {
    let s = params.settings();
    gaussian(
        s.w_app,
        (fi.position - fj.position).norm_squared(),
        s.theta_pc,
        (fi.color - fj.color).norm_squared(),
        s.theta_c,
    )
}

pub fn kernel_semantic(fi: &MapPoint, fj: &MapPoint, params: &CrfParams) -> f64 {
    let s = params.settings();
    gaussian(
        s.w2,
        (fi.position - fj.position).norm_squared(),
        s.theta_ps,
        sq_dist(fi.dist.probs(), fj.dist.probs()),
        s.theta_s,
    )
}

pub fn compatibility(kernel: Kernel, li: usize, lj: usize, classes: usize, params: &CrfParams) -> Result<f64, CrfError> {
    if li >= classes || lj >= classes {
        return Err(CrfError::LabelOutOfRange { label: li.max(lj), classes });
    }
    Ok(match kernel {
        Kernel::Smoothness | Kernel::Appearance => {
            if li == lj {
                0.0
            } else {
                1.0
            }
        }
        Kernel::Semantic => params.mu2().value(li, lj),
    })
}

pub fn unary_potential(dist: &crate::fusion::LabelDistribution) -> Vec<f64> {
    dist.probs().iter().map(|p| -p.ln()).collect()
}

/// Kernel values for one pair: smoothness, appearance, semantic.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairKernels {
    pub smooth: f64,
    pub appearance: f64,
    pub semantic: f64,
}

/// Flattened features of a map, for the inner loops of inference.
///
/// `pair(i, j)` evaluates the same expressions as the `kernel_*` functions,
/// with invalid-normal pairs contributing zero to the smoothness kernel.
pub struct PairwiseModel {
    pub(crate) n: usize,
    pub(crate) m: usize,
    positions: Vec<[f64; 3]>,
    normals: Vec<Option<[f64; 3]>>,
    colors: Vec<[f64; 3]>,
    scores: Vec<f64>,
    pub(crate) unary: Vec<f64>,
    w1: f64,
    w2: f64,
    w_app: f64,
    inv_pn: f64,
    inv_n: f64,
    inv_pc: f64,
    inv_c: f64,
    inv_ps: f64,
    inv_s: f64,
    pub(crate) mu2: Vec<f64>,
}

impl PairwiseModel {
    pub fn new(map: &SemanticMap, params: &CrfParams) -> Result<Self, CrfError> {
        let m = map.num_classes();
        params.check_classes(m)?;
        let s = params.settings();
        let half_inv = |t: f64| 1.0 / (2.0 * t * t);
        let mut mu2 = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                mu2[a * m + b] = params.mu2().value(a, b);
            }
        }
        let pts = map.points();
        Ok(Self {
            n: pts.len(),
            m,
            positions: pts.iter().map(|p| [p.position.x, p.position.y, p.position.z]).collect(),
            normals: pts.iter().map(|p| p.normal.get().map(|n| [n.x, n.y, n.z])).collect(),
            colors: pts.iter().map(|p| [p.color.x, p.color.y, p.color.z]).collect(),
            scores: pts.iter().flat_map(|p| p.dist.probs().iter().copied()).collect(),
            unary: pts.iter().flat_map(|p| p.dist.probs().iter().map(|v| -v.ln())).collect(),
            w1: s.w1,
            w2: s.w2,
            w_app: s.w_app,
            inv_pn: half_inv(s.theta_pn),
            inv_n: half_inv(s.theta_n),
            inv_pc: half_inv(s.theta_pc),
            inv_c: half_inv(s.theta_c),
            inv_ps: half_inv(s.theta_ps),
            inv_s: half_inv(s.theta_s),
            mu2,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn classes(&self) -> usize {
        self.m
    }

    pub fn unary(&self, i: usize) -> &[f64] {
        &self.unary[i * self.m..(i + 1) * self.m]
    }

    pub fn decoupled(&self) -> bool {
        self.w1 == 0.0 && self.w2 == 0.0 && self.w_app == 0.0
    }

    #[inline]
    pub fn pair(&self, i: usize, j: usize) -> PairKernels {
        let (pi, pj) = (&self.positions[i], &self.positions[j]);
        let dp2 = sq3(pi, pj);
        let smooth = match (self.w1 > 0.0, &self.normals[i], &self.normals[j]) {
            (true, Some(ni), Some(nj)) => self.w1 * (-dp2 * self.inv_pn - sq3(ni, nj) * self.inv_n).exp(),
            _ => 0.0,
        };
        let appearance = if self.w_app > 0.0 {
            self.w_app * (-dp2 * self.inv_pc - sq3(&self.colors[i], &self.colors[j]) * self.inv_c).exp()
        } else {
            0.0
        };
        let semantic = if self.w2 > 0.0 {
            let m = self.m;
            let ds2 = sq_dist(&self.scores[i * m..(i + 1) * m], &self.scores[j * m..(j + 1) * m]);
            self.w2 * (-dp2 * self.inv_ps - ds2 * self.inv_s).exp()
        } else {
            0.0
        };
        PairKernels {
            smooth,
            appearance,
            semantic,
        }
    }

    /// `Σ_m μ^(m)(a, b) k^(m)` for one pair and one label pair.
    #[inline]
    pub fn pair_cost(&self, k: &PairKernels, a: usize, b: usize) -> f64 {
        let potts = if a == b { 0.0 } else { k.smooth + k.appearance };
        potts + self.mu2[a * self.m + b] * k.semantic
    }
}

#[inline]
fn sq3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}
