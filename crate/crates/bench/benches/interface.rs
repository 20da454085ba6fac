use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use msfrac_core::bench::{Case, RunConfig};
use msfrac_core::interface::{apply_s_gamma, FluxOperator};
use msfrac_core::msbasis::assemble_basis;
use msfrac_core::subdomain::SolveCounter;

fn s_gamma(c: &mut Criterion) {
    for level in [1u8, 2] {
        let problem = RunConfig::benchmark(level, Case::I).build_problem().unwrap();
        let counter = SolveCounter::unlimited();
        let basis = assemble_basis(&problem, &counter).unwrap();
        let phi: Vec<f64> = (0..problem.n_mortar()).map(|i| (i as f64 * 0.37).sin()).collect();

        let mut group = c.benchmark_group(format!("s_gamma/level{level}"));
        group.bench_function("direct", |b| {
            b.iter(|| apply_s_gamma(&FluxOperator::Direct(&problem), black_box(&phi), &counter).unwrap())
        });
        let ms = FluxOperator::multiscale(&problem, &basis).unwrap();
        group.bench_function("multiscale", |b| {
            b.iter(|| apply_s_gamma(&ms, black_box(&phi), &counter).unwrap())
        });
        group.finish();
    }
}

fn basis_assembly(c: &mut Criterion) {
    let problem = RunConfig::benchmark(1, Case::I).build_problem().unwrap();
    c.bench_function("basis/level1", |b| {
        b.iter_batched(
            SolveCounter::unlimited,
            |counter| assemble_basis(&problem, &counter).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, s_gamma, basis_assembly);
criterion_main!(benches);
