use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use twistlab_bench::perturbed_kp;
use twistlab_core::enflo::{check_increase, enflo_iterate};
use twistlab_core::extops::{find_congruence, random_factor_extension};
use twistlab_core::maps::check_factor_axioms;
use twistlab_core::spaces::{random_zero_sum_config, sample_sphere};
use twistlab_core::{HomMap, NormedSpace, Pair, RhoOf, TwistedSpace};

fn map_eval(c: &mut Criterion) {
    let mut group = c.benchmark_group("map_eval");
    for dim in [2, 8, 32] {
        let h = perturbed_kp(dim);
        let x = sample_sphere(&NormedSpace::l2(dim), 1, 1).remove(0);
        group.bench_with_input(BenchmarkId::from_parameter(dim), &x, |b, x| b.iter(|| h.apply(black_box(x))));
    }
    group.finish();
}

fn factor_axioms(c: &mut Criterion) {
    let phi = RhoOf::new(perturbed_kp(4));
    c.bench_function("factor_axioms_1000", |b| b.iter(|| check_factor_axioms(&phi, black_box(1000), 7)));
}

fn twisted_bounds(c: &mut Criterion) {
    let t = TwistedSpace::from_rho(HomMap::kalton_peck(NormedSpace::l2(4)));
    t.c_estimate();
    let pts = sample_sphere(&NormedSpace::l2(4), 2, 3);
    let z = Pair::new(pts[0].clone(), pts[1].clone());
    let mut group = c.benchmark_group("twisted_norm_bounds");
    for depth in [1, 3, 5] {
        group.bench_with_input(BenchmarkId::from_parameter(depth), &depth, |b, &d| {
            b.iter(|| t.norm_bounds(black_box(&z), d, 1).unwrap())
        });
    }
    group.finish();
}

fn enflo_increase(c: &mut Criterion) {
    let h = enflo_iterate(&HomMap::zero(NormedSpace::l2(1), NormedSpace::l2(1)), 3).unwrap();
    let configs: Vec<_> = (0..200).map(|s| random_zero_sum_config(h.domain(), 2 + s % 10, s as u64).unwrap()).collect();
    c.bench_function("delta3_increase_200", |b| b.iter(|| check_increase(&h, black_box(&configs)).unwrap()));
}

fn congruence(c: &mut Criterion) {
    let a = random_factor_extension(4, 4, 1).unwrap().extension;
    let b = random_factor_extension(4, 4, 2).unwrap().extension;
    c.bench_function("congruence_4x4", |bench| bench.iter(|| find_congruence(black_box(&a), black_box(&b)).unwrap()));
}

criterion_group!(benches, map_eval, factor_axioms, twisted_bounds, enflo_increase, congruence);
criterion_main!(benches);
