//! Gibbs energy and exhaustive marginals for small instances.

use super::kernels::{compatibility, kernel_appearance, kernel_semantic, kernel_smoothness, unary_potential, Kernel, PairwiseModel};
use super::{CrfError, CrfParams, MarginalField};
use crate::fusion::SemanticMap;

pub const MAX_EXACT_POINTS: usize = 12;
pub const MAX_EXACT_CLASSES: usize = 4;

/// `Σ_i ψ_i(l_i) + Σ_{i<j} Σ_m μ^(m)(l_i, l_j) k^(m)(f_i, f_j)`, evaluated
/// straight from the kernel functions.
pub fn gibbs_energy(labeling: &[usize], map: &SemanticMap, params: &CrfParams) -> Result<f64, CrfError> {
    if labeling.len() != map.len() {
        return Err(CrfError::LengthMismatch {
            expected: map.len(),
            found: labeling.len(),
        });
    }
    params.check_classes(map.num_classes())?;
    let m = map.num_classes();
    let pts = map.points();
    let mut energy = 0.0;
    for (p, &l) in pts.iter().zip(labeling) {
        if l >= m {
            return Err(CrfError::LabelOutOfRange { label: l, classes: m });
        }
        energy += unary_potential(&p.dist)[l];
    }
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let (a, b) = (labeling[i], labeling[j]);
            let smooth = kernel_smoothness(&pts[i], &pts[j], params).unwrap_or(0.0);
            energy += compatibility(Kernel::Smoothness, a, b, m, params)? * smooth;
            energy += compatibility(Kernel::Appearance, a, b, m, params)? * kernel_appearance(&pts[i], &pts[j], params);
            energy += compatibility(Kernel::Semantic, a, b, m, params)? * kernel_semantic(&pts[i], &pts[j], params);
        }
    }
    Ok(energy)
}

/// Exact marginals of `p(l) ∝ exp(-E(l))` by enumerating all `M^N`
/// labelings. Pair costs are tabulated once from the same kernels used by
/// [`gibbs_energy`].
pub fn exact_marginals_bruteforce(map: &SemanticMap, params: &CrfParams) -> Result<MarginalField, CrfError> {
    let n = map.len();
    let m = map.num_classes();
    if n > MAX_EXACT_POINTS || m > MAX_EXACT_CLASSES {
        return Err(CrfError::InstanceTooLarge { points: n, classes: m });
    }
    if n == 0 {
        return Err(CrfError::EmptyCloud);
    }
    let model = PairwiseModel::new(map, params)?;
    // cost[(i*n + j)*m*m + a*m + b] for i < j
    let mut cost = vec![0.0; n * n * m * m];
    for i in 0..n {
        for j in i + 1..n {
            let k = model.pair(i, j);
            for a in 0..m {
                for b in 0..m {
                    cost[((i * n + j) * m + a) * m + b] = model.pair_cost(&k, a, b);
                }
            }
        }
    }
    let mut labels = vec![0usize; n];
    let mut weights = vec![0.0f64; n * m];
    let mut total = 0.0f64;
    let mut shift = f64::INFINITY;
    loop {
        let mut e = 0.0;
        for i in 0..n {
            e += model.unary(i)[labels[i]];
        }
        for i in 0..n {
            for j in i + 1..n {
                e += cost[((i * n + j) * m + labels[i]) * m + labels[j]];
            }
        }
        if e < shift {
            // rebase accumulated weights onto the new minimum energy
            if shift.is_finite() {
                let r = (e - shift).exp();
                total *= r;
                for w in &mut weights {
                    *w *= r;
                }
            }
            shift = e;
        }
        let w = (shift - e).exp();
        total += w;
        for (i, &l) in labels.iter().enumerate() {
            weights[i * m + l] += w;
        }
        // odometer increment, last point fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                let values = weights.iter().map(|w| w / total).collect();
                return Ok(MarginalField::from_rows(m, values));
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < m {
                break;
            }
            labels[pos] = 0;
        }
    }
}
