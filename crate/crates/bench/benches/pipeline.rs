use std::hint::black_box;

use chainspec::epsgraph::{chain_components_in, GraphLadder, RefinementSchedule};
use chainspec::ordertypes::{normalize, OrderTypeTerm};
use chainspec::spectrum::{prolongation, spectrum, Context, SpectrumOptions};
use chainspec::systems::{sample, SystemDef};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_sampling(c: &mut Criterion) {
    let s = SystemDef::cascade();
    let mut g = c.benchmark_group("sample");
    for res in [1e-2, 1e-3] {
        g.bench_with_input(BenchmarkId::from_parameter(res), &res, |b, &r| b.iter(|| sample(&s, r).unwrap()));
    }
    g.finish();
}

fn bench_graphs(c: &mut Criterion) {
    let s = SystemDef::cascade();
    let grid = sample(&s, 1e-3).unwrap();
    let sched = RefinementSchedule::for_grid(s.diam, 10, grid.spacing);
    c.bench_function("graph_ladder/cascade-1e-3", |b| b.iter(|| GraphLadder::new(&grid, &sched)));
    let ladder = GraphLadder::new(&grid, &sched);
    c.bench_function("chain_components/cascade-1e-3", |b| b.iter(|| chain_components_in(&ladder, grid.len())));
}

fn bench_spectrum(c: &mut Criterion) {
    let s = SystemDef::periodic_circle(2, 0.5);
    let grid = sample(&s, 1e-2).unwrap();
    let sched = RefinementSchedule::for_grid(s.diam, 10, grid.spacing);
    let ctx = Context::new(&s, &grid, &sched);
    let x = grid.nearest(&s.point(0.1)).1;
    let y = grid.nearest(&s.point(0.75)).1;
    let opts = SpectrumOptions::default();
    c.bench_function("spectrum/circle-periodic-2", |b| b.iter(|| spectrum(&ctx, black_box(x), black_box(y), &opts)));
}

fn bench_prolongation(c: &mut Criterion) {
    let s = SystemDef::cascade();
    let grid = sample(&s, 2e-3).unwrap();
    let sched = RefinementSchedule::for_grid(s.diam, 10, grid.spacing);
    let x = grid.nearest(&s.point(1.0)).1;
    let mut g = c.benchmark_group("prolongation");
    g.sample_size(10);
    g.bench_function("cascade-2e-3-alpha2", |b| b.iter(|| prolongation(&s, &grid, &sched, x, 2)));
    g.finish();
}

fn bench_normalize(c: &mut Criterion) {
    let terms: Vec<OrderTypeTerm> =
        ["(w+fin:3).(w*+fin:1)+z.w+e.fin:4", "fin:2+w+fin:5.w+z+e+e", "(w*+w).(fin:3+e).w"].iter().map(|t| t.parse().unwrap()).collect();
    c.bench_function("normalize/mixed", |b| b.iter(|| terms.iter().map(|t| normalize(black_box(t))).collect::<Vec<_>>()));
}

criterion_group!(benches, bench_sampling, bench_graphs, bench_spectrum, bench_prolongation, bench_normalize);
criterion_main!(benches);
