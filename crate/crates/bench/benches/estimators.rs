use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::rngs::SmallRng;
use rand::SeedableRng;

use tipbrw_core::estimators::ftheta::{QuadratureConfig, SoftminRho};
use tipbrw_core::estimators::tail::tail_curve_from_stats;
use tipbrw_core::pointproc::{sample_dppp, DpppMode};
use tipbrw_core::{f_theta, simulate_many, DecorationSampler, DpppConfig, OffspringLaw, SimConfig, TailOptions};

fn laplace_exponent(c: &mut Criterion) {
    let quad = QuadratureConfig::default();
    for l in [1usize, 2, 3] {
        let rho = SoftminRho { dim: l, scale: 1.0 };
        let theta: Vec<f64> = (0..l).map(|i| 0.5 + 0.3 * i as f64).collect();
        let beta: Vec<f64> = (0..l).map(|i| 1.5 + i as f64).collect();
        c.bench_function(&format!("f_theta_l{l}"), |b| {
            b.iter(|| black_box(f_theta(&rho, &theta, &beta, &quad).unwrap()))
        });
    }
}

fn tail_curves(c: &mut Criterion) {
    let law = OffspringLaw::gaussian_binary();
    let sim = SimConfig {
        generations: 10,
        seed: 1,
        ..SimConfig::default()
    };
    let stats = simulate_many(&law, &sim, 20_000, Some(1)).unwrap();
    let grid: Vec<f64> = (0..=16).map(|i| 0.25 * i as f64).collect();
    c.bench_function("tail_curve_20k_replicas", |b| {
        b.iter(|| black_box(tail_curve_from_stats(&stats, &[2.0], &[0.0], &grid, TailOptions::default()).unwrap()))
    });
}

fn point_processes(c: &mut Criterion) {
    let config = DpppConfig {
        lambda: 1.0,
        window_hi: 5.0,
        decoration: DecorationSampler::DiracZero,
        mode: DpppMode::Limit,
    };
    let mut rng = SmallRng::seed_from_u64(3);
    c.bench_function("sample_dppp_dirac_b5", |b| {
        b.iter(|| black_box(sample_dppp(&config, &mut rng).unwrap()))
    });
}

criterion_group!(benches, laplace_exponent, tail_curves, point_processes);
criterion_main!(benches);
