use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use st_minres::greedy::{als_rank_one, greedy_solve};
use st_minres::{CaseName, Method, SolverConfig};
use st_minres_bench::{iterate, system};

fn operator_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("operator_apply");
    for method in Method::ALL {
        let sys = system(CaseName::HeatManufactured, method, 5, 10);
        let x = iterate(&sys, 8);
        group.bench_with_input(BenchmarkId::from_parameter(method), &x, |b, x| {
            b.iter(|| sys.operator.apply(black_box(x)).unwrap())
        });
    }
    group.finish();
}

fn rank_one_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("als_rank_one");
    let cfg = SolverConfig { seed: 7, ..SolverConfig::default() };
    for method in Method::ALL {
        let sys = system(CaseName::HeatManufactured, method, 4, 8);
        let u = iterate(&sys, 4);
        group.bench_with_input(BenchmarkId::from_parameter(method), &u, |b, u| {
            b.iter(|| als_rank_one(&sys, black_box(u), &cfg, 5).unwrap())
        });
    }
    group.finish();
}

fn small_greedy(c: &mut Criterion) {
    let mut group = c.benchmark_group("greedy_solve");
    group.sample_size(10);
    let cfg = SolverConfig { eps_greedy: 1e-4, seed: 7, ..SolverConfig::default() };
    for case in CaseName::ALL {
        let sys = system(case, Method::Preconditioned, 3, 6);
        group.bench_function(BenchmarkId::from_parameter(case), |b| b.iter(|| greedy_solve(&sys, &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, operator_apply, rank_one_update, small_greedy);
criterion_main!(benches);
