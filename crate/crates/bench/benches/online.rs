use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pempc::qp::solve_stacked_exact;
use pempc::{CoupledFactorization, TrackingWorkspace, Vector};
use pempc_bench::{controller, start_state};

fn control_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("control_step");
    group.sample_size(20);
    for (i_bar, n) in [(1, 5), (3, 10), (3, 20), (3, 40)] {
        let mut ctl = controller(i_bar, n, 10).expect("benchmark instance");
        let x0 = start_state(i_bar);
        group.bench_with_input(BenchmarkId::new(format!("I{i_bar}"), n), &x0, |b, x0| {
            b.iter(|| {
                ctl.reset();
                ctl.control_step(x0).expect("control step")
            })
        });
    }
    group.finish();
}

fn tracking_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("tracking_solve");
    for n in [10, 40] {
        let ctl = controller(3, n, 1).expect("benchmark instance");
        let sp = &ctl.sp;
        let fact = CoupledFactorization::factorize(sp).expect("factorization");
        let mut ws = TrackingWorkspace::new(sp);
        let r = Vector::from_fn(sp.primal_dim(), |i, _| ((i % 7) as f64 - 3.0) * 0.1);
        let x0 = start_state(3);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| fact.solve_tracking(sp, &r, &x0, &mut ws).expect("tracking solve"))
        });
    }
    group.finish();
}

fn exact_mpc(c: &mut Criterion) {
    let ctl = controller(3, 10, 1).expect("benchmark instance");
    let x0 = start_state(3);
    c.bench_function("exact_qp/I3/10", |b| b.iter(|| solve_stacked_exact(&ctl.sp, &x0).expect("exact solve")));
}

criterion_group!(benches, control_step, tracking_solve, exact_mpc);
criterion_main!(benches);
