use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tdgf_bench::{bs_problem, dgm_batch, net, states};
use tdgf_core::evaluation::{moneyness_grid, tdgf_surface, DEFAULT_VARIANCE_LEVEL};
use tdgf_core::oracle::{binomial_price_1d, lsm_price, simulate_paths, LsmBasis};
use tdgf_core::solvers::{dgm_loss_grad, tdgf_step_grad};
use tdgf_core::{DgmOutput, TimeGrid};

fn stages(c: &mut Criterion) {
    for d in [1, 2] {
        let p = bs_problem(d);
        let batch = dgm_batch(&p);
        let points = states(&p, batch.interior.nrows());
        let theta = net(d, 1);
        let prev = net(d, 2);
        c.bench_function(&format!("tdgf_stage_d{d}"), |b| {
            b.iter(|| tdgf_step_grad(&theta, &prev, black_box(&points), &p, 0.01).unwrap())
        });
        let space_time = net(d + 1, 3);
        c.bench_function(&format!("dgm_stage_d{d}"), |b| {
            b.iter(|| dgm_loss_grad(&space_time, &p, black_box(&batch), DgmOutput::default()).unwrap())
        });
    }
}

fn surfaces(c: &mut Criterion) {
    let p = bs_problem(2);
    let grid = TimeGrid::new(1.0, 1).unwrap();
    let nets = vec![net(2, 1), net(2, 2)];
    c.bench_function("surface_47_points_d2", |b| {
        b.iter(|| tdgf_surface(&nets, &grid, &p, black_box(&[1.0]), DEFAULT_VARIANCE_LEVEL).unwrap())
    });
    let (_, g) = moneyness_grid(&p.model, &p.domain, DEFAULT_VARIANCE_LEVEL);
    let s0 = g.row(23).to_vec();
    let mut group = c.benchmark_group("reference");
    group.sample_size(10);
    group.bench_function("lsm_1000x1000_d2", |b| {
        b.iter(|| {
            let paths = simulate_paths(&p.model, black_box(&s0), 1.0, 1000, 1000, 5).unwrap();
            lsm_price(&paths, &p.payoff, 0.05, LsmBasis::Mean).unwrap()
        })
    });
    group.bench_function("binomial_4000", |b| {
        b.iter(|| binomial_price_1d(0.05, 0.5, 1.0, 1.0, black_box(1.0), 4000).unwrap())
    });
    group.finish();
}

criterion_group!(benches, stages, surfaces);
criterion_main!(benches);
