use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use fastmix::norm_ball::{project_l1, project_spectral_ball};
use fastmix::projection::{project_smoothed, DualLayout, DualObjective, DualState, SolverOptions};
use fastmix::{GibbsChain, MatrixNorm, NormBall, ProjectionMode, ProjectionProblem, Scan};
use fastmix_bench::grid;

fn l1(c: &mut Criterion) {
    let mut group = c.benchmark_group("project_l1");
    for len in [16, 256, 4096] {
        let a: Vec<f64> = (0..len).map(|k| ((k * 37 % 101) as f64 - 50.0) / 10.0).collect();
        group.bench_with_input(BenchmarkId::from_parameter(len), &a, |b, a| b.iter(|| project_l1(black_box(a), 1.0)));
    }
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let m = grid(6, 2.0);
    let r = fastmix::dependency::bound_matrix(&m, fastmix::BoundVariant::InfCorollary).unwrap().matrix;
    c.bench_function("project_spectral_ball/36", |b| b.iter(|| project_spectral_ball(black_box(&r), 1.0).unwrap()));
}

fn dual(c: &mut Criterion) {
    let mut group = c.benchmark_group("dual");
    group.sample_size(10);
    for (norm, mode) in [(MatrixNorm::Inf, ProjectionMode::Sparse), (MatrixNorm::Spectral, ProjectionMode::Dense)] {
        let ball = NormBall::new(norm, 1.0).unwrap();
        let problem = ProjectionProblem::anchored_at_bound(grid(8, 2.0), 1.0, ball, mode).unwrap();
        let layout = DualLayout::new(&problem.psi, mode);
        let objective = DualObjective {
            psi: &problem.psi,
            anchor: &problem.anchor,
            alpha: problem.alpha,
            ball,
            layout: &layout,
        };
        let state = DualState::zeros(&layout);
        group.bench_function(BenchmarkId::new("evaluate", format!("{norm:?}")), |b| {
            b.iter(|| objective.evaluate(black_box(&state)).unwrap())
        });
        group.bench_function(BenchmarkId::new("project_smoothed", format!("{norm:?}")), |b| {
            b.iter(|| project_smoothed(&problem, &SolverOptions::default(), None).unwrap())
        });
    }
    group.finish();
}

fn gibbs(c: &mut Criterion) {
    let m = grid(8, 3.0);
    let mut group = c.benchmark_group("gibbs_sweep");
    for scan in [Scan::Systematic, Scan::Random] {
        let mut chain = GibbsChain::new(&m, scan, 1, 0);
        group.bench_function(format!("{scan:?}"), |b| b.iter(|| chain.sweep(black_box(&m))));
    }
    group.finish();
}

criterion_group!(benches, l1, spectral, dual, gibbs);
criterion_main!(benches);
