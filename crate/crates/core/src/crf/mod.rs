//! Fully connected CRF over the semantic map.
//!
//! Energy of a labeling `l`:
//! `E(l) = Σ_i ψ_i(l_i) + Σ_{i<j} Σ_m μ^(m)(l_i, l_j) k^(m)(f_i, f_j)` with
//! `ψ_i(l) = -ln p_i(l)` from the fused distributions and Gaussian kernels
//! over position plus normal, colour or score features. Kernel sums are raw
//! (no per-point normalization), so the mean-field path and the exhaustive
//! oracle optimize exactly the same energy.

mod exact;
mod inference;
mod kernels;
mod params;

pub use exact::{exact_marginals_bruteforce, gibbs_energy, MAX_EXACT_CLASSES, MAX_EXACT_POINTS};
pub use inference::{
    free_energy, mean_field_init, mean_field_step, regularize, regularize_observed, sequential_update_point, MarginalField, Regularization,
};
pub use kernels::{compatibility, kernel_appearance, kernel_semantic, kernel_smoothness, unary_potential, Kernel, PairKernels, PairwiseModel};
pub use params::{Compatibility, CrfParams, KernelSettings};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrfError {
    #[error("invalid CRF parameters: {0}")]
    InvalidParams(String),
    #[error("invalid compatibility matrix: {0}")]
    InvalidCompatibility(String),
    #[error("pair has an invalid normal")]
    InvalidNormal,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("map is empty")]
    EmptyCloud,
    #[error("instance with {points} points and {classes} classes is too large to enumerate")]
    InstanceTooLarge { points: usize, classes: usize },
    #[error("numeric failure: {0}")]
    NumericFailure(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{LabelDistribution, MapPoint, Origin, SemanticMap};
    use crate::geometry::Normal;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(p: [f64; 3], s: &[f64]) -> MapPoint {
        MapPoint {
            position: Vector3::from(p),
            normal: Normal::Valid(Vector3::z()),
            color: Vector3::repeat(0.5),
            dist: LabelDistribution::normalize(s).unwrap(),
            origin: Origin::default(),
            viewpoint: Vector3::zeros(),
            observations: 1,
        }
    }

    fn map(points: Vec<MapPoint>) -> SemanticMap {
        let m = points[0].dist.len();
        SemanticMap::from_points(m, points).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize, m: usize, spread: f64) -> SemanticMap {
        let pts = (0..n)
            .map(|_| {
                let s: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
                let nz = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0).normalize();
                MapPoint {
                    position: Vector3::new(
                        rng.random_range(0.0..spread),
                        rng.random_range(0.0..spread),
                        rng.random_range(0.0..spread),
                    ),
                    normal: if rng.random_bool(0.9) { Normal::Valid(nz) } else { Normal::Invalid },
                    color: Vector3::new(rng.random(), rng.random(), rng.random()),
                    dist: LabelDistribution::normalize(&s).unwrap(),
                    origin: Origin::default(),
                    viewpoint: Vector3::zeros(),
                    observations: 1,
                }
            })
            .collect();
        SemanticMap::from_points(m, pts).unwrap()
    }

    fn only_smoothness(m: usize) -> CrfParams {
        CrfParams::new(
            KernelSettings {
                w1: 1.0,
                w2: 0.0,
                w_app: 0.0,
                ..Default::default()
            },
            Compatibility::potts_matrix(m),
        )
        .unwrap()
    }

    #[test]
    fn gibbs_energy_examples() {
        let p = CrfParams::defaults(2);
        let single = map(vec![point([0.0; 3], &[0.5, 0.5])]);
        for l in 0..2 {
            assert!((gibbs_energy(&[l], &single, &p).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        }

        let two = map(vec![point([0.0; 3], &[0.7, 0.3]), point([0.0; 3], &[0.4, 0.6])]);
        let unaries = |a: usize, b: usize| -two.points()[0].dist.probs()[a].ln() - two.points()[1].dist.probs()[b].ln();
        assert!((gibbs_energy(&[1, 1], &two, &p).unwrap() - unaries(1, 1)).abs() < 1e-12);
        let ps = only_smoothness(2);
        assert!((gibbs_energy(&[0, 1], &two, &ps).unwrap() - (unaries(0, 1) + 1.0)).abs() < 1e-12);
        assert!(matches!(gibbs_energy(&[0], &two, &p), Err(CrfError::LengthMismatch { .. })));
    }

    #[test]
    fn init_recovers_distributions() {
        let m = map(vec![point([0.0; 3], &[0.6, 0.4]), point([1.0; 3], &[1.0, 1.0])]);
        let q = mean_field_init(&m).unwrap();
        assert!((q.row(0)[0] - 0.6).abs() < 1e-6);
        assert!((q.row(1)[0] - 0.5).abs() < 1e-15);
        assert!(q.max_row_sum_error() < 1e-9);
        assert!(matches!(mean_field_init(&SemanticMap::new(2)), Err(CrfError::EmptyCloud)));
    }

    #[test]
    fn decoupled_field_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 30, 3, 1.0);
        let p = CrfParams::defaults(3).decoupled();
        let q = mean_field_init(&m).unwrap();
        let q2 = mean_field_step(&q, &m, &p).unwrap();
        assert!(q.max_l1_change(&q2) < 1e-12);
    }

    #[test]
    fn single_point_step_is_softmax_of_unary() {
        let m = map(vec![point([0.0; 3], &[0.2, 0.3, 0.5])]);
        let p = CrfParams::defaults(3);
        let q = mean_field_init(&m).unwrap();
        let q2 = mean_field_step(&q, &m, &p).unwrap();
        assert_eq!(q, q2);
        let q3 = sequential_update_point(&q, 0, &m, &p).unwrap();
        assert_eq!(q2, q3);
    }

    #[test]
    fn colocated_agreeing_points_sharpen() {
        let m = map(vec![point([0.0; 3], &[0.8, 0.2]), point([0.0; 3], &[0.8, 0.2])]);
        let p = only_smoothness(2);
        let q = mean_field_init(&m).unwrap();
        let q2 = mean_field_step(&q, &m, &p).unwrap();
        // one step: Q'(0) ∝ 0.8·e^{-0.2}, Q'(1) ∝ 0.2·e^{-0.8}
        let a = 0.8 * (-0.2f64).exp();
        let b = 0.2 * (-0.8f64).exp();
        for i in 0..2 {
            assert!(q2.row(i)[0] > 0.8);
            assert!((q2.row(i)[0] - a / (a + b)).abs() < 1e-6);
        }
        let exact = exact_marginals_bruteforce(&m, &p).unwrap();
        assert!(exact.row(0)[0] > 0.8);
    }

    #[test]
    fn regularize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_map(&mut rng, 40, 3, 0.5);
        let base = m.argmax_labels();
        let zero = regularize(&m, &CrfParams::defaults(3).with_iterations(0)).unwrap();
        assert_eq!(zero.labels, base);
        assert_eq!(zero.iterations_used, 0);
        let decoupled = regularize(&m, &CrfParams::defaults(3).decoupled()).unwrap();
        assert_eq!(decoupled.labels, base);
        assert!(decoupled.converged);
        assert_eq!(decoupled.iterations_used, 1);

        let before = m.clone();
        let r = regularize_observed(&m, &CrfParams::defaults(3), |_, q| assert!(q.max_row_sum_error() < 1e-9)).unwrap();
        assert_eq!(m, before);
        assert!(r.iterations_used <= 10);
    }

    #[test]
    fn bruteforce_examples() {
        let m1 = map(vec![point([0.0; 3], &[0.2, 0.3, 0.5])]);
        let e = exact_marginals_bruteforce(&m1, &CrfParams::defaults(3)).unwrap();
        let q = mean_field_init(&m1).unwrap();
        for (a, b) in e.row(0).iter().zip(q.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m2 = random_map(&mut rng, 2, 3, 1.0);
        let e = exact_marginals_bruteforce(&m2, &CrfParams::defaults(3).decoupled()).unwrap();
        let q = mean_field_init(&m2).unwrap();
        for i in 0..2 {
            for (a, b) in e.row(i).iter().zip(q.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        // symmetric instance: swapping labels 0 and 1 maps it to itself
        let sym = map(vec![
            point([0.0; 3], &[0.7, 0.3]),
            point([0.05, 0.0, 0.0], &[0.3, 0.7]),
            point([0.025, 0.5, 0.0], &[0.5, 0.5]),
        ]);
        let e = exact_marginals_bruteforce(&sym, &CrfParams::defaults(2)).unwrap();
        assert!(e.max_row_sum_error() < 1e-12);
        assert!((e.row(0)[0] - e.row(1)[1]).abs() < 1e-12);
        assert!((e.row(2)[0] - 0.5).abs() < 1e-12);

        let big = random_map(&mut rng, 13, 2, 1.0);
        assert!(matches!(
            exact_marginals_bruteforce(&big, &CrfParams::defaults(2)),
            Err(CrfError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn bruteforce_matches_direct_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_map(&mut rng, 4, 3, 0.4);
        let p = CrfParams::new(
            KernelSettings {
                w_app: 0.5,
                ..Default::default()
            },
            Compatibility::potts_matrix(3),
        )
        .unwrap();
        let exact = exact_marginals_bruteforce(&m, &p).unwrap();
        let mut marg = vec![0.0; 12];
        let mut z = 0.0;
        for code in 0..81usize {
            let labels: Vec<usize> = (0..4).map(|i| code / 3usize.pow(3 - i as u32) % 3).collect();
            let w = (-gibbs_energy(&labels, &m, &p).unwrap()).exp();
            z += w;
            for (i, &l) in labels.iter().enumerate() {
                marg[i * 3 + l] += w;
            }
        }
        for (k, v) in marg.iter().enumerate() {
            assert!((v / z - exact.row(k / 3)[k % 3]).abs() < 1e-12);
        }
    }

    #[test]
    fn free_energy_examples() {
        let one = map(vec![point([0.0; 3], &[1.0, 0.0])]);
        let p = CrfParams::defaults(2);
        let q = MarginalField::from_rows(2, vec![1.0, 0.0]);
        let f = free_energy(&q, &one, &p).unwrap();
        assert!((f - unary_potential(&one.points()[0].dist)[0]).abs() < 1e-12);

        // decoupled: F(softmax(-ψ)) = -Σ ln Z_i, Z_i = Σ_l p_i(l) = 1
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_map(&mut rng, 10, 3, 1.0);
        let q = mean_field_init(&m).unwrap();
        let zsum: f64 = m.points().iter().map(|pt| pt.dist.probs().iter().sum::<f64>().ln()).sum();
        let f = free_energy(&q, &m, &CrfParams::defaults(3).decoupled()).unwrap();
        assert!((f + zsum).abs() < 1e-9);
    }

    #[test]
    fn sequential_sweep_never_increases_free_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_map(&mut rng, 15, 3, 0.6);
        let p = CrfParams::defaults(3);
        let mut q = mean_field_init(&m).unwrap();
        let mut f = free_energy(&q, &m, &p).unwrap();
        for _ in 0..2 {
            for i in 0..m.len() {
                q = sequential_update_point(&q, i, &m, &p).unwrap();
                let f2 = free_energy(&q, &m, &p).unwrap();
                assert!(f2 <= f + 1e-9, "{f2} > {f}");
                f = f2;
            }
        }
        assert!(matches!(sequential_update_point(&q, 99, &m, &p), Err(CrfError::IndexOutOfRange { .. })));
        let q0 = mean_field_init(&m).unwrap();
        let dec = CrfParams::defaults(3).decoupled();
        assert!(sequential_update_point(&q0, 3, &m, &dec).unwrap().max_l1_change(&q0) < 1e-12);
    }

    #[test]
    fn step_is_independent_of_worker_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_map(&mut rng, 200, 4, 1.0);
        let p = CrfParams::defaults(4);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| regularize(&m, &p).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
