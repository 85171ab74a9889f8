//! Mean-field inference over the fully connected CRF.
//!
//! The update for point `i` is
//! `Q_i(l) ∝ exp(-ψ_i(l) - Σ_m Σ_l' μ^(m)(l, l') Σ_{j≠i} k^(m)(f_i, f_j) Q_j(l'))`,
//! with pairwise sums evaluated directly over all `j` in ascending order.

use rayon::prelude::*;

use super::kernels::PairwiseModel;
use super::{CrfError, CrfParams};
use crate::fusion::{argmax, SemanticMap};

/// Approximate per-point marginals, row `i` aligned with map point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalField {
    classes: usize,
    values: Vec<f64>,
}

impl MarginalField {
    pub fn from_rows(classes: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % classes.max(1), 0);
        Self { classes, values }
    }

    pub fn len(&self) -> usize {
        if self.classes == 0 {
            0
        } else {
            self.values.len() / self.classes
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.classes)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.rows().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max_i ‖Q_i − other_i‖₁`.
    pub fn max_l1_change(&self, other: &MarginalField) -> f64 {
        self.rows()
            .zip(other.rows())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Softmax of `logits` written into `out`, shifted by the maximum.
fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn mean_field_init(map: &SemanticMap) -> Result<MarginalField, CrfError> {
    if map.is_empty() {
        return Err(CrfError::EmptyCloud);
    }
    let m = map.num_classes();
    let mut values = vec![0.0; map.len() * m];
    for (p, out) in map.points().iter().zip(values.chunks_exact_mut(m)) {
        let logits: Vec<f64> = p.dist.probs().iter().map(|v| v.ln()).collect();
        softmax_into(&logits, out);
    }
    Ok(MarginalField::from_rows(m, values))
}

/// Writes the updated row for point `i` given the current field `q`.
fn update_row(model: &PairwiseModel, q: &MarginalField, i: usize, out: &mut [f64]) {
    let m = model.m;
    // Potts kernels (smoothness + appearance) and the semantic kernel keep
    // separate label-weighted sums.
    let mut potts = vec![0.0; m];
    let mut semantic = vec![0.0; m];
    if !model.decoupled() {
        for j in 0..model.n {
            if j == i {
                continue;
            }
            let k = model.pair(i, j);
            let qj = q.row(j);
            let kp = k.smooth + k.appearance;
            if kp != 0.0 {
                for (acc, &v) in potts.iter_mut().zip(qj) {
                    *acc += kp * v;
                }
            }
            if k.semantic != 0.0 {
                for (acc, &v) in semantic.iter_mut().zip(qj) {
                    *acc += k.semantic * v;
                }
            }
        }
    }
    let potts_total: f64 = potts.iter().sum();
    let unary = model.unary(i);
    let mut logits = vec![0.0; m];
    for l in 0..m {
        let mut pairwise = potts_total - potts[l];
        let row = &model.mu2[l * m..(l + 1) * m];
        for (mu, s) in row.iter().zip(&semantic) {
            pairwise += mu * s;
        }
        logits[l] = -unary[l] - pairwise;
    }
    softmax_into(&logits, out);
}

/// One synchronous update of every row from a frozen copy of `q`.
pub fn mean_field_step(q: &MarginalField, map: &SemanticMap, params: &CrfParams) -> Result<MarginalField, CrfError> {
    let model = PairwiseModel::new(map, params)?;
    step_with_model(q, &model)
}

pub(crate) fn step_with_model(q: &MarginalField, model: &PairwiseModel) -> Result<MarginalField, CrfError> {
    check_field(q, model)?;
    let m = model.m;
    let mut values = vec![0.0; q.values.len()];
    values.par_chunks_mut(m).enumerate().for_each(|(i, out)| update_row(model, q, i, out));
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CrfError::NumericFailure("non-finite marginal after update".into()));
    }
    Ok(MarginalField::from_rows(m, values))
}

fn check_field(q: &MarginalField, model: &PairwiseModel) -> Result<(), CrfError> {
    if q.len() != model.n || q.classes() != model.m {
        return Err(CrfError::LengthMismatch {
            expected: model.n,
            found: q.len(),
        });
    }
    Ok(())
}

/// Updates row `i` alone, reading the current field.
pub fn sequential_update_point(q: &MarginalField, i: usize, map: &SemanticMap, params: &CrfParams) -> Result<MarginalField, CrfError> {
    let model = PairwiseModel::new(map, params)?;
    sequential_with_model(q, i, &model)
}

pub(crate) fn sequential_with_model(q: &MarginalField, i: usize, model: &PairwiseModel) -> Result<MarginalField, CrfError> {
    check_field(q, model)?;
    if i >= model.n {
        return Err(CrfError::IndexOutOfRange { index: i, len: model.n });
    }
    let mut next = q.clone();
    let m = model.m;
    let mut row = vec![0.0; m];
    update_row(model, q, i, &mut row);
    next.values[i * m..(i + 1) * m].copy_from_slice(&row);
    Ok(next)
}

/// Mean-field objective: expected energy minus entropy.
pub fn free_energy(q: &MarginalField, map: &SemanticMap, params: &CrfParams) -> Result<f64, CrfError> {
    let model = PairwiseModel::new(map, params)?;
    check_field(q, &model)?;
    let m = model.m;
    let mut unary = 0.0;
    let mut entropy = 0.0;
    for i in 0..model.n {
        for (qv, psi) in q.row(i).iter().zip(model.unary(i)) {
            unary += qv * psi;
            if *qv > 0.0 {
                entropy += qv * qv.ln();
            }
        }
    }
    let mut pairwise = 0.0;
    for i in 0..model.n {
        let qi = q.row(i);
        for j in i + 1..model.n {
            let k = model.pair(i, j);
            let qj = q.row(j);
            for a in 0..m {
                if qi[a] == 0.0 {
                    continue;
                }
                for b in 0..m {
                    pairwise += qi[a] * qj[b] * model.pair_cost(&k, a, b);
                }
            }
        }
    }
    Ok(unary + pairwise + entropy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularization {
    pub field: MarginalField,
    pub labels: Vec<usize>,
    pub iterations_used: usize,
    /// Max row L1 change of the last update (0 when no update ran).
    pub last_change: f64,
    pub converged: bool,
}

/// Mean-field from the fused distributions, at most `params.iterations`
/// synchronous steps, stopping once the max row L1 change drops below
/// `convergence_tol`. The map itself is not modified.
pub fn regularize(map: &SemanticMap, params: &CrfParams) -> Result<Regularization, CrfError> {
    regularize_observed(map, params, |_, _| {})
}

/// [`regularize`] with a callback receiving every field (initial one included).
pub fn regularize_observed(
    map: &SemanticMap,
    params: &CrfParams,
    mut observe: impl FnMut(usize, &MarginalField),
) -> Result<Regularization, CrfError> {
    let model = PairwiseModel::new(map, params)?;
    let mut q = mean_field_init(map)?;
    observe(0, &q);
    let tol = params.settings().convergence_tol;
    let mut used = 0;
    let mut last_change = 0.0;
    let mut converged = false;
    while used < params.iterations() {
        let next = step_with_model(&q, &model)?;
        last_change = next.max_l1_change(&q);
        q = next;
        used += 1;
        observe(used, &q);
        if last_change < tol {
            converged = true;
            break;
        }
    }
    let labels = q.labels();
    Ok(Regularization {
        field: q,
        labels,
        iterations_used: used,
        last_change,
        converged,
    })
}
