use proptest::prelude::*;
use rand::rngs::SmallRng;
use rand::SeedableRng;

use tipbrw_core::brwsim::{self, SimConfig};
use tipbrw_core::estimators::ftheta::{f_theta, QuadratureConfig, SoftminRho};
use tipbrw_core::estimators::{tail_curve_from_stats, TailOptions};
use tipbrw_core::numerics::{mix_keys, proportion};
use tipbrw_core::offspring::OffspringLaw;
use tipbrw_core::pointproc::{sample_corollary, sample_ppp_exp, DecorationSampler, PointMeasure};

fn small_sim(seed: u64, n: usize) -> SimConfig {
    SimConfig {
        generations: n,
        betas: vec![1.5, 2.0],
        seed,
        ..SimConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn raw_binary_normal_normalizes_to_boundary(mean in -3.0f64..3.0, var in 0.2f64..4.0) {
        let raw = OffspringLaw::binary_normal(mean, var).unwrap();
        let law = raw.normalize_to_boundary().unwrap();
        prop_assert!(law.analytic_log_mgf(1.0).unwrap().abs() < 1e-10);
        prop_assert!(law.log_mgf_derivative(1.0).unwrap().abs() < 1e-8);
    }

    #[test]
    fn replicas_are_reproducible(seed in any::<u64>(), replica in 0u64..1000) {
        let law = OffspringLaw::gaussian_binary();
        let cfg = small_sim(seed, 6);
        let (fa, a) = brwsim::simulate_replica(&law, &cfg, replica).unwrap();
        let (fb, b) = brwsim::simulate_replica(&law, &cfg, replica).unwrap();
        prop_assert_eq!(fa.positions, fb.positions);
        prop_assert_eq!(a.z_n.to_bits(), b.z_n.to_bits());
        prop_assert_eq!(a.m_n.to_bits(), b.m_n.to_bits());
    }

    #[test]
    fn minimum_bounds_every_position(seed in any::<u64>()) {
        let law = OffspringLaw::lattice_binary();
        let (front, stats) = brwsim::simulate(&law, &small_sim(seed, 7)).unwrap();
        prop_assert_eq!(front.len(), 1 << 7);
        prop_assert!(front.positions.iter().all(|p| *p >= stats.m_n));
        // W_{n,β} ≥ e^{-β M_n}: the minimal particle alone contributes that much
        for (k, b) in cfg_betas().iter().enumerate() {
            prop_assert!(stats.w[k] >= (-b * stats.m_n).exp() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn killed_population_is_a_subset(seed in any::<u64>()) {
        let law = OffspringLaw::gaussian_binary();
        let cfg = SimConfig { kill_at_zero: true, free_statistics: true, ..small_sim(seed, 8) };
        let (_, s) = brwsim::simulate(&law, &cfg).unwrap();
        for k in 0..2 {
            prop_assert!(s.w_kill[k] <= s.w[k]);
        }
        if s.survived_kill {
            prop_assert!(s.m_kill >= s.m_n);
            prop_assert!(s.m_kill >= 0.0);
        }
    }

    #[test]
    fn tail_curve_is_nonincreasing(seed in any::<u64>(), delta in -1.0f64..1.0) {
        let law = OffspringLaw::gaussian_binary();
        let cfg = small_sim(seed, 6);
        let stats: Vec<_> = (0..64)
            .map(|r| brwsim::simulate_replica(&law, &cfg, r).unwrap().1)
            .collect();
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.25).collect();
        let c = tail_curve_from_stats(&stats, &[1.5, 2.0], &[delta, 0.0], &xs, TailOptions::default()).unwrap();
        prop_assert!(c.joint_prob.windows(2).all(|w| w[1].value <= w[0].value));
        prop_assert!(c.joint_prob.iter().all(|e| (0.0..=1.0).contains(&e.value) && e.se >= 0.0));
    }

    #[test]
    fn translate_then_back_is_identity(atoms in prop::collection::vec(-10.0f64..10.0, 0..40), x in -5.0f64..5.0, beta in 1.1f64..3.0) {
        let mu = PointMeasure::new(atoms, (-10.0, 10.0));
        let moved = mu.translate(x);
        prop_assert_eq!(moved.len(), mu.len());
        let lhs = moved.laplace(beta);
        let rhs = (beta * x).exp() * mu.laplace(beta);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300));
        let back = moved.translate(-x);
        for (a, b) in back.atoms().iter().zip(mu.atoms()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn superposition_adds_counts(a in prop::collection::vec(0.0f64..5.0, 0..30), b in prop::collection::vec(0.0f64..5.0, 0..30)) {
        let (ma, mb) = (PointMeasure::new(a, (0.0, 5.0)), PointMeasure::new(b, (0.0, 5.0)));
        let s = ma.superpose(&mb).unwrap();
        prop_assert_eq!(s.len(), ma.len() + mb.len());
        prop_assert!(s.atoms().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn corollary_minimum_is_zero(seed in any::<u64>(), window in 1.0f64..4.0) {
        let mut rng = SmallRng::seed_from_u64(seed);
        let mu = sample_corollary(window, &DecorationSampler::DiracZero, &mut rng).unwrap();
        prop_assert_eq!(mu.atoms()[0], 0.0);
    }

    #[test]
    fn ppp_atoms_stay_in_window(seed in any::<u64>(), lambda in 0.1f64..3.0, b in -2.0f64..3.0) {
        let mut rng = SmallRng::seed_from_u64(seed);
        let mu = sample_ppp_exp(lambda, b, &mut rng).unwrap();
        prop_assert!(mu.atoms().iter().all(|p| *p <= b));
    }

    #[test]
    fn ftheta_scaling_identity(t1 in 0.05f64..2.0, t2 in 0.05f64..2.0, s in -1.0f64..1.0) {
        let rho = SoftminRho { dim: 2, scale: 0.7 };
        let beta = [1.5, 2.5];
        let cfg = QuadratureConfig::default();
        let base = f_theta(&rho, &[t1, t2], &beta, &cfg).unwrap();
        let scaled = f_theta(&rho, &[(-beta[0] * s).exp() * t1, (-beta[1] * s).exp() * t2], &beta, &cfg).unwrap();
        let target = (-s).exp() * base.f_hat;
        prop_assert!((scaled.f_hat / target - 1.0).abs() < 1e-4);
        prop_assert!(base.per_k_terms.iter().all(|g| *g >= 0.0));
        prop_assert!((base.f_hat - (base.per_k_terms[0] - base.per_k_terms[1])).abs() <= base.quadrature_error + 1e-15);
    }

    #[test]
    fn proportion_se_is_nonnegative(hits in 0u64..1000, extra in 0u64..1000) {
        let e = proportion(hits, hits + extra + 1);
        prop_assert!(e.se >= 0.0 && (0.0..=1.0).contains(&e.value));
    }

    #[test]
    fn mixed_keys_differ_across_children(k in any::<u64>(), i in 0u64..64, j in 0u64..64) {
        prop_assume!(i != j);
        prop_assert_ne!(mix_keys(k, i), mix_keys(k, j));
    }
}

fn cfg_betas() -> [f64; 2] {
    [1.5, 2.0]
}

#[test]
fn ftheta_decreases_to_zero_along_a_ray() {
    let rho = SoftminRho { dim: 2, scale: 1.0 };
    let cfg = QuadratureConfig::default();
    let values: Vec<f64> = [1.0, 0.5, 0.25, 0.125]
        .iter()
        .map(|t| f_theta(&rho, &[0.8 * t, 0.3 * t], &[2.0, 3.0], &cfg).unwrap().f_hat)
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(f_theta(&rho, &[0.0, 0.0], &[2.0, 3.0], &cfg).unwrap().f_hat, 0.0);
}
