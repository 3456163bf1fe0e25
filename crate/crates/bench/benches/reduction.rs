use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dot_pals_core::pals::{absorption_diagonal, diagonal_delta, initial_guess};
use dot_pals_core::{
    assemble, Counters, Diffusion, DiscreteOperators, DomainSpec, GlobalBasis, PalsConfig,
    PalsParams, RomModel, SolverOpts, SourceDetectorLayout,
};

fn setup(nx: usize) -> (DiscreteOperators, PalsConfig, PalsParams, Vec<f64>, GlobalBasis) {
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
    let mut p2 = p.clone();
    p2.0[0] += 0.1;
    let a1b = absorption_diagonal(&p2, &cfg, &domain);
    let counters = Counters::default();
    let basis = GlobalBasis::build(
        &ops,
        &[a1.clone(), a1b],
        &[0.0, 0.5],
        1e-8,
        &SolverOpts::default(),
        &counters,
    )
    .unwrap();
    (ops, cfg, p, a1, basis)
}

fn bench_reduced_response(c: &mut Criterion) {
    let mut group = c.benchmark_group("reduced_response");
    for nx in [25usize, 50] {
        let (ops, _, _, a1, basis) = setup(nx);
        let rom = RomModel::reduce(&ops, &basis, &a1).unwrap();
        let counters = Counters::default();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{nx}x{nx}-r{}", basis.rank())),
            &nx,
            |b, _| b.iter(|| rom.reduced_frequency_response(0.5, &counters).unwrap()),
        );
    }
    group.finish();
}

fn bench_delta_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("absorption_update");
    for nx in [25usize, 50] {
        let (ops, cfg, p, a1, basis) = setup(nx);
        let mut q = p.clone();
        q.0[0] += 0.05;
        let a1_new = absorption_diagonal(&q, &cfg, &ops.domain);
        let delta = diagonal_delta(&a1, &a1_new);
        let counters = Counters::default();

        let mut rom = RomModel::reduce(&ops, &basis, &a1).unwrap();
        rom.rebuild_interval = usize::MAX; // isolate the low-rank path
        group.bench_with_input(BenchmarkId::new("delta", nx), &nx, |b, _| {
            b.iter(|| rom.update_absorption(&delta, &counters))
        });

        let mut rom = RomModel::reduce(&ops, &basis, &a1).unwrap();
        group.bench_with_input(BenchmarkId::new("dense-rebuild", nx), &nx, |b, _| {
            b.iter(|| rom.set_absorption(&a1_new).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_reduced_response, bench_delta_update);
criterion_main!(benches);
