use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dot_pals_core::forward::{adjoint_solutions, frequency_response_with_state, full_jacobian_block};
use dot_pals_core::pals::{absorption_derivatives, absorption_diagonal, initial_guess};
use dot_pals_core::solve::SolverKind;
use dot_pals_core::{
    assemble, Counters, Diffusion, DiscreteOperators, DomainSpec, PalsConfig, SolverOpts,
    SourceDetectorLayout,
};

fn setup(nx: usize) -> (DiscreteOperators, Vec<f64>) {
    let domain = DomainSpec {
        half_width: 2.5,
        half_height: 2.5,
        nx,
        nz: nx,
        speed_of_light: 1.0,
        robin_constant: 1.0,
        diffusion: Diffusion::Constant(0.03),
    };
    let layout = SourceDetectorLayout::uniform(&domain, 8, 8, 0).unwrap();
    let ops = assemble(&domain, &layout).unwrap();
    let cfg = PalsConfig::default();
    let p = initial_guess(&cfg, &domain);
    let a1 = absorption_diagonal(&p, &cfg, &domain);
    (ops, a1)
}

fn bench_response(c: &mut Criterion) {
    let mut group = c.benchmark_group("frequency_response");
    group.sample_size(10);
    for nx in [25usize, 50] {
        let (ops, a1) = setup(nx);
        for kind in [SolverKind::Dense, SolverKind::Iterative] {
            let opts = SolverOpts {
                kind,
                ..SolverOpts::default()
            };
            let counters = Counters::default();
            group.bench_with_input(
                BenchmarkId::new(format!("{kind:?}"), nx),
                &nx,
                |b, _| {
                    b.iter(|| {
                        frequency_response_with_state(&ops, &a1, 0.5, &opts, &counters).unwrap()
                    })
                },
            );
        }
    }
    group.finish();
}

fn bench_jacobian(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjoint_jacobian");
    group.sample_size(10);
    for nx in [25usize, 50] {
        let (ops, a1) = setup(nx);
        let cfg = PalsConfig::default();
        let p = initial_guess(&cfg, &ops.domain);
        let da1 = absorption_derivatives(&p, &cfg, &ops.domain);
        let opts = SolverOpts::default();
        let counters = Counters::default();
        let (_, x) = frequency_response_with_state(&ops, &a1, 0.5, &opts, &counters).unwrap();
        let z = adjoint_solutions(&ops, &a1, 0.5, &opts, &counters).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(nx), &nx, |b, _| {
            b.iter(|| full_jacobian_block(&ops, &da1, &x, &z).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_response, bench_jacobian);
criterion_main!(benches);
