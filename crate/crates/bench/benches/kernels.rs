use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use shsprop::monte_carlo::{em_step, ParticleEnsemble};
use shsprop::{
    step_implicit, weno5_reconstruct, AdvectionStencil, Discretization, FpOperator,
    KoopmanOperator, SolverConfig,
};
use shsprop_bench::scenario_at;

fn weno(c: &mut Criterion) {
    let w = [0.1, 0.4, 0.35, 0.9, 1.2];
    c.bench_function("weno5_reconstruct", |b| {
        b.iter(|| weno5_reconstruct(black_box(w)))
    });
}

fn density_rhs(c: &mut Criterion) {
    let sc = scenario_at("torus_two_mode", 100);
    let op = FpOperator::new(&sc.system).unwrap();
    let v = sc.initial_density.values.clone();
    let mut out = vec![0.0; v.len()];
    c.bench_function("fp_rhs_torus_100x100", |b| {
        b.iter(|| op.rhs(black_box(&v), &mut out))
    });
    let ko = KoopmanOperator::new(&sc.system, AdvectionStencil::Upwind).unwrap();
    let u = sc.observable.values.clone();
    c.bench_function("koopman_rhs_torus_100x100", |b| {
        b.iter(|| ko.rhs(black_box(&u), &mut out))
    });
}

fn implicit(c: &mut Criterion) {
    let mut g = c.benchmark_group("implicit");
    g.sample_size(10);
    let sc = scenario_at("torus_two_mode", 64);
    let op = FpOperator::new(&sc.system).unwrap();
    let cfg = SolverConfig::with_dt(0.003);
    let v = sc.initial_density.values.clone();
    g.bench_function("backward_euler_torus_64x64", |b| {
        b.iter(|| step_implicit(&op, black_box(&v), &cfg).unwrap())
    });
    g.finish();
}

fn particles(c: &mut Criterion) {
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    let sc = scenario_at("torus_two_mode", 100);
    let disc = Discretization::new(&sc.system).unwrap();
    let ens =
        ParticleEnsemble::sample_density(&disc, &sc.initial_density.values, 100_000, 1).unwrap();
    g.bench_function("em_step_torus_1e5", |b| {
        b.iter_batched(
            || ens.clone(),
            |mut e| em_step(&mut e, &sc.system, 1e-3).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, weno, density_rhs, implicit, particles);
criterion_main!(benches);
