use super::FusionError;

/// Minimum probability kept for every class after normalization.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Per-point posterior over the `M` classes. The exposed probabilities sum
/// to one and hold no entry below the floor (up to the final renormalization).
///
/// Fusion accumulates unfloored log-weights and floors only the exposed
/// probabilities, so a chain of updates gives the same result in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Vec<f64>,
    /// Unnormalized log posterior, shifted so its maximum is 0.
    log_weights: Vec<f64>,
}

/// Shifts `logs` so the maximum is 0.
fn shifted(mut logs: Vec<f64>) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for l in &mut logs {
        *l -= max;
    }
    logs
}

/// Divides by the sum, floors at `floor`, then renormalizes once more.
fn floor_normalize(raw: &[f64], floor: f64) -> Vec<f64> {
    let sum: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|v| (v / sum).max(floor)).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    probs
}

impl LabelDistribution {
    pub fn uniform(m: usize) -> Self {
        Self {
            probs: vec![1.0 / m as f64; m],
            log_weights: vec![0.0; m],
        }
    }

    pub fn normalize(raw: &[f64]) -> Result<Self, FusionError> {
        Self::normalize_with_floor(raw, DEFAULT_FLOOR)
    }

    /// Divides by the sum, floors at `floor`, then renormalizes once more.
    /// The floored values seed the log-weights, so a zero score cannot
    /// annihilate a class under later fusion.
    pub fn normalize_with_floor(raw: &[f64], floor: f64) -> Result<Self, FusionError> {
        if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FusionError::InvalidEntry);
        }
        if !(raw.iter().sum::<f64>() > 0.0) {
            return Err(FusionError::AllZero);
        }
        let probs = floor_normalize(raw, floor);
        let log_weights = shifted(probs.iter().map(|p| p.ln()).collect());
        Ok(Self { probs, log_weights })
    }

    /// Wraps an already-normalized vector. Log-weights are taken from the
    /// entries, floored at [`DEFAULT_FLOOR`].
    pub fn from_normalized(probs: Vec<f64>) -> Result<Self, FusionError> {
        if probs.is_empty() || probs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FusionError::InvalidEntry);
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FusionError::NotNormalized(sum));
        }
        let log_weights = shifted(probs.iter().map(|p| p.max(DEFAULT_FLOOR).ln()).collect());
        Ok(Self { probs, log_weights })
    }

    /// Rebuilds a distribution from its log-weights; the inverse of
    /// [`LabelDistribution::log_weights`].
    pub fn from_log_weights(log_weights: Vec<f64>) -> Result<Self, FusionError> {
        if log_weights.is_empty() || log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(FusionError::InvalidEntry);
        }
        let log_weights = shifted(log_weights);
        let unnorm: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
        Ok(Self {
            probs: floor_normalize(&unnorm, DEFAULT_FLOOR),
            log_weights,
        })
    }

    /// Restores a distribution exactly as stored by [`LabelDistribution::probs`]
    /// and [`LabelDistribution::log_weights`].
    pub fn from_parts(probs: Vec<f64>, log_weights: Vec<f64>) -> Result<Self, FusionError> {
        if log_weights.len() != probs.len() {
            return Err(FusionError::LengthMismatch {
                expected: probs.len(),
                found: log_weights.len(),
            });
        }
        if log_weights.iter().any(|v| v.is_nan() || *v > 0.0) {
            return Err(FusionError::InvalidEntry);
        }
        let probs = Self::from_normalized(probs)?.probs;
        Ok(Self { probs, log_weights })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax()]
    }

    /// Recursive Bayesian update: element-wise product of prior and
    /// likelihood, renormalized. The product is a sum of log-weights, so long
    /// chains of small values do not underflow.
    pub fn fuse(&self, likelihood: &LabelDistribution) -> Result<Self, FusionError> {
        if self.len() != likelihood.len() {
            return Err(FusionError::LengthMismatch {
                expected: self.len(),
                found: likelihood.len(),
            });
        }
        let logs = self.log_weights.iter().zip(&likelihood.log_weights).map(|(a, b)| a + b).collect();
        Self::from_log_weights(logs)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_examples() {
        let d = LabelDistribution::normalize(&[2.0, 2.0]).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);

        // (1, 1e-6, 1e-6) / (1 + 2e-6)
        let d = LabelDistribution::normalize(&[1.0, 0.0, 0.0]).unwrap();
        let z = 1.0 + 2e-6;
        assert!(close(d.probs(), &[1.0 / z, 1e-6 / z, 1e-6 / z], 1e-15));
        assert!((d.probs()[0] - 0.999998).abs() < 1e-9);

        assert!(matches!(LabelDistribution::normalize(&[0.0, 0.0, 0.0]), Err(FusionError::AllZero)));
        assert!(matches!(LabelDistribution::normalize(&[-1.0, 2.0]), Err(FusionError::InvalidEntry)));
    }

    #[test]
    fn fuse_examples() {
        let prior = LabelDistribution::normalize(&[0.6, 0.4]).unwrap();
        let same = prior.fuse(&LabelDistribution::uniform(2)).unwrap();
        assert!(close(same.probs(), &[0.6, 0.4], 1e-15));

        let lik = LabelDistribution::normalize(&[0.3, 0.7]).unwrap();
        let post = prior.fuse(&lik).unwrap();
        assert!(close(post.probs(), &[0.18 / 0.46, 0.28 / 0.46], 1e-12));
        assert!((post.probs()[0] - 0.39130).abs() < 1e-5);

        let bad = LabelDistribution::uniform(3);
        assert!(matches!(prior.fuse(&bad), Err(FusionError::LengthMismatch { .. })));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(LabelDistribution::uniform(14).argmax(), 0);
    }

    #[test]
    fn survives_long_chains() {
        let lik = LabelDistribution::normalize(&[0.2, 0.3, 0.5]).unwrap();
        let mut d = LabelDistribution::uniform(3);
        for _ in 0..2000 {
            d = d.fuse(&lik).unwrap();
        }
        assert!(d.probs().iter().all(|p| p.is_finite() && *p > 0.0));
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(d.argmax(), 2);
    }

    #[test]
    fn floor_does_not_pin_a_class_against_later_evidence() {
        // Ten votes for class 0 then ten for class 1 end where they started.
        let a = LabelDistribution::normalize(&[0.9, 0.1]).unwrap();
        let b = LabelDistribution::normalize(&[0.1, 0.9]).unwrap();
        let mut d = LabelDistribution::uniform(2);
        for l in std::iter::repeat_n(&a, 10).chain(std::iter::repeat_n(&b, 10)) {
            d = d.fuse(l).unwrap();
            assert!(d.probs().iter().all(|&p| p >= DEFAULT_FLOOR / (1.0 + 2.0 * DEFAULT_FLOOR)));
        }
        assert!(close(d.probs(), &[0.5, 0.5], 1e-9));
    }

    fn arb_dist(m: usize) -> impl Strategy<Value = LabelDistribution> {
        prop::collection::vec(0.0f64..1.0, m)
            .prop_filter("non-zero", |v| v.iter().sum::<f64>() > 1e-9)
            .prop_map(|v| LabelDistribution::normalize(&v).unwrap())
    }

    proptest! {
        #[test]
        fn fuse_commutes((a, b) in (2usize..15).prop_flat_map(|m| (arb_dist(m), arb_dist(m)))) {
            let ab = a.fuse(&b).unwrap();
            let ba = b.fuse(&a).unwrap();
            prop_assert!(close(ab.probs(), ba.probs(), 1e-12));
            prop_assert!((ab.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn repeated_evidence_never_hurts_its_argmax(d in arb_dist(4), l in arb_dist(4)) {
            let k = l.argmax();
            let once = d.fuse(&l).unwrap();
            let twice = once.fuse(&l).unwrap();
            prop_assert!(twice.probs()[k] >= once.probs()[k] - 1e-12);
        }

        #[test]
        fn chains_are_order_invariant(liks in prop::collection::vec(arb_dist(5), 2..12), seed in any::<u64>()) {
            let chain = |ls: &[LabelDistribution]| ls.iter().fold(LabelDistribution::uniform(5), |acc, l| acc.fuse(l).unwrap());
            let mut shuffled = liks.clone();
            let n = shuffled.len();
            shuffled.rotate_left((seed % n as u64) as usize);
            shuffled.swap(0, n - 1);
            prop_assert!(close(chain(&liks).probs(), chain(&shuffled).probs(), 1e-9));
        }

        #[test]
        fn log_weights_round_trip(d in arb_dist(6), l in arb_dist(6)) {
            let f = d.fuse(&l).unwrap();
            prop_assert_eq!(LabelDistribution::from_log_weights(f.log_weights().to_vec()).unwrap(), f);
        }
    }
}
