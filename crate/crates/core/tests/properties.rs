use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use somflow::analysis::{arrow_grid, lattice, mode_coverage, HIGH_MODES};
use somflow::critic::{argmax_first, TwinQ};
use somflow::net::{Activation, MeanFlowPolicy};
use somflow::schedules::NoiseSchedule;
use somflow::score::{batch_q_normalize, log_sum_exp, normalize_rescale, softmax, ScoreConfig};

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, len)
}

fn random_policy(seed: u64, state_dim: usize) -> MeanFlowPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MeanFlowPolicy::new(2, state_dim, &[8, 8], Activation::Gelu, &mut rng).unwrap();
    let n = p.net.num_params();
    let flat: Vec<f64> = (0..n).map(|i| ((i as f64 * 0.37 + seed as f64).sin()) * 0.6).collect();
    p.net.set_params_flat(&flat).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rescaled_score_has_norm_w_and_ignores_scale(g in prop::array::uniform2(-100.0..100.0f64), c in 1e-2..1e2f64) {
        prop_assume!(g[0].hypot(g[1]) > 1e-3);
        let cfg = ScoreConfig::default();
        let a = normalize_rescale(&cfg, &g);
        let b = normalize_rescale(&cfg, &[c * g[0], c * g[1]]);
        prop_assert!((a[0].hypot(a[1]) - cfg.w).abs() < 1e-6);
        prop_assert!((a[0] - b[0]).abs() < 1e-5 && (a[1] - b[1]).abs() < 1e-5);
    }

    #[test]
    fn batch_normalization_ignores_positive_affine_maps(q in finite_vec(2..64), scale in 1e-2..1e2f64, shift in -1e3..1e3f64) {
        let spread = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - q.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let z = batch_q_normalize(&q).unwrap();
        let moved: Vec<f64> = q.iter().map(|x| scale * x + shift).collect();
        let w = batch_q_normalize(&moved).unwrap();
        for (a, b) in z.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(x in finite_vec(1..40), shift in -500.0..500.0f64) {
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let lse = log_sum_exp(&x);
        prop_assert!(lse >= x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 1e-12);
    }

    #[test]
    fn argmax_survives_positive_rescaling(q in finite_vec(1..50), c in 1e-3..1e3f64) {
        let scaled: Vec<f64> = q.iter().map(|v| c * v).collect();
        prop_assert_eq!(argmax_first(&q), argmax_first(&scaled));
    }

    #[test]
    fn twin_minimum_never_exceeds_either_head(seed in 0u64..1000, a in prop::array::uniform2(-1.0..1.0f64)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = TwinQ::new(3, 2, &[8], &mut rng).unwrap();
        let s = Array2::from_shape_vec((1, 3), vec![0.1, -0.2, 0.3]).unwrap();
        let act = Array2::from_shape_vec((1, 2), a.to_vec()).unwrap();
        let (q1, q2) = q.values(s.view(), act.view()).unwrap();
        let m = q.min_values(s.view(), act.view()).unwrap();
        prop_assert!(m[0] <= q1[0] && m[0] <= q2[0]);
        prop_assert!(m[0] == q1[0] || m[0] == q2[0]);
    }

    #[test]
    fn action_jacobian_product_is_linear(seed in 0u64..200, v in prop::array::uniform2(-3.0..3.0f64), w in prop::array::uniform2(-3.0..3.0f64), c in -2.0..2.0f64) {
        let p = random_policy(seed, 0);
        let a = Array2::from_shape_vec((1, 2), vec![0.4, -0.7]).unwrap();
        let s = Array2::zeros((1, 0));
        let jv = |d: [f64; 2]| {
            let tangent = Array2::from_shape_vec((1, 2), d.to_vec()).unwrap();
            p.jvp_batch(a.view(), &[0.2], &[0.7], s.view(), tangent.view(), 0.0).unwrap().1
        };
        let lhs = jv([v[0] + c * w[0], v[1] + c * w[1]]);
        let (jv_v, jv_w) = (jv(v), jv(w));
        for k in 0..2 {
            let rhs = jv_v[[0, k]] + c * jv_w[[0, k]];
            prop_assert!((lhs[[0, k]] - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn coverage_counts_partition_endpoints(pts in prop::collection::vec(prop::array::uniform2(-3.0..3.0f64), 0..80), radius in 0.05..1.0f64) {
        let c = mode_coverage(&pts, radius);
        prop_assert_eq!(c.total, c.n + c.e + c.s + c.w);
        let near = pts.iter().filter(|p| HIGH_MODES.iter().any(|m| (p[0] - m[0]).hypot(p[1] - m[1]) <= radius)).count();
        prop_assert_eq!(c.total, near);
    }

    #[test]
    fn arrow_starts_lie_on_the_lattice(side in 2usize..9, extent in 0.5..3.0f64, seed in 0u64..50) {
        let p = random_policy(seed, 0);
        let grid = arrow_grid(&p, &[], side, extent).unwrap();
        let lat = lattice(side, extent);
        prop_assert_eq!(grid.endpoints().len(), side * side);
        prop_assert_eq!(&grid.starts, &lat);
    }

    #[test]
    fn vp_kernel_mean_and_variance_stay_in_unit_range(t in 0.0..1.0f64) {
        let k = NoiseSchedule::vp(0.1, 10.0).unwrap().kernel(t).unwrap();
        prop_assert!(k.mean_coeff > 0.0 && k.mean_coeff <= 1.0);
        prop_assert!((k.mean_coeff * k.mean_coeff + k.variance() - 1.0).abs() < 1e-12);
    }
}
