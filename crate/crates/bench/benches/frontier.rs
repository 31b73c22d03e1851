use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use tipbrw_core::{simulate_replica, OffspringLaw, SimConfig};

fn generations(c: &mut Criterion) {
    let law = OffspringLaw::gaussian_binary();
    let mut group = c.benchmark_group("simulate_replica");
    for n in [8usize, 12, 16] {
        let config = SimConfig {
            generations: n,
            betas: vec![1.5, 2.0, 3.0],
            ..SimConfig::default()
        };
        // particles created over the whole tree
        group.throughput(Throughput::Elements((1u64 << (n + 1)) - 2));
        group.bench_with_input(BenchmarkId::new("gaussian", n), &config, |b, cfg| {
            let mut replica = 0u64;
            b.iter(|| {
                replica += 1;
                black_box(simulate_replica(&law, cfg, replica).unwrap())
            })
        });
    }
    group.finish();
}

fn killed_and_pruned(c: &mut Criterion) {
    let law = OffspringLaw::gaussian_binary();
    let killed = SimConfig {
        generations: 16,
        kill_at_zero: true,
        free_statistics: false,
        ..SimConfig::default()
    };
    let pruned = SimConfig {
        generations: 16,
        ceiling_offset: Some(4.0),
        ..SimConfig::default()
    };
    let mut group = c.benchmark_group("frontier_variants");
    for (name, cfg) in [("killed_n16", killed), ("ceiling4_n16", pruned)] {
        group.bench_function(name, |b| {
            let mut replica = 0u64;
            b.iter(|| {
                replica += 1;
                black_box(simulate_replica(&law, &cfg, replica).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, generations, killed_and_pruned);
criterion_main!(benches);
