//! Parallel-vs-sequential throughput of the data-parallel kernels.
//!
//! The "seq" variants run inside a single-thread rayon pool (or call the
//! always-available sequential helpers), the "par" variants use the default
//! pool. Building with `--no-default-features` removes rayon entirely; the
//! same bench then measures the pure sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use eqdisc_core::dictionary::build_dictionary;
use eqdisc_core::linalg::Mat;
use eqdisc_core::subset::{solve_subset, SubsetProblem};
use eqdisc_core::systems::{integrate_ode, SystemSpec};
use eqdisc_core::tuning::{cross_validate, SolverBudgets, TuningConfig};

#[cfg(feature = "parallel")]
fn run_with_threads<R>(threads: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("pool")
        .install(f)
}

#[cfg(not(feature = "parallel"))]
fn run_with_threads<R>(_threads: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    f()
}

fn lorenz_states(n_time: f64) -> Mat {
    integrate_ode(&SystemSpec::lorenz3(), &[-8.0, 8.0, 27.0], 0.002, n_time)
        .expect("integration")
        .states
}

fn bench_dictionary_evaluate(c: &mut Criterion) {
    let states = lorenz_states(20.0);
    let dict = build_dictionary(3, 5, true);
    let mut group = c.benchmark_group("dictionary_evaluate");
    group.sample_size(10);
    for threads in [1usize, 0] {
        let label = if threads == 1 { "seq" } else { "par" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            let workers = if t == 0 { num_threads() } else { t };
            b.iter(|| {
                run_with_threads(workers, || black_box(dict.evaluate(black_box(&states)).unwrap()))
            });
        });
    }
    group.finish();
}

fn bench_subset_solve(c: &mut Criterion) {
    let states = lorenz_states(10.0);
    let dict = build_dictionary(3, 3, true);
    let dm = dict.evaluate(&states).unwrap();
    let traj = integrate_ode(&SystemSpec::lorenz3(), &[-8.0, 8.0, 27.0], 0.002, 10.0).unwrap();
    let y = traj.derivs.as_ref().unwrap().col(1);
    let mut group = c.benchmark_group("subset_solve_k3");
    group.sample_size(10);
    group.bench_function("branch_and_bound", |b| {
        b.iter(|| {
            let prob = SubsetProblem::new(dm.theta.clone(), y.clone(), 3, 1e-6);
            black_box(solve_subset(&prob).unwrap())
        });
    });
    group.finish();
}

fn bench_cv_grid(c: &mut Criterion) {
    let states = lorenz_states(8.0);
    let dict = build_dictionary(3, 3, true);
    let dm = dict.evaluate(&states).unwrap();
    let traj = integrate_ode(&SystemSpec::lorenz3(), &[-8.0, 8.0, 27.0], 0.002, 8.0).unwrap();
    let y = traj.derivs.as_ref().unwrap().col(0);
    let cfg = TuningConfig { k_max: 3, m: 4, t_folds: 3, ..Default::default() };
    let budgets = SolverBudgets::default();
    let mut group = c.benchmark_group("cv_grid_36_cells");
    group.sample_size(10);
    for threads in [1usize, 0] {
        let label = if threads == 1 { "seq" } else { "par" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            let workers = if t == 0 { num_threads() } else { t };
            b.iter(|| {
                run_with_threads(workers, || {
                    black_box(cross_validate(&dm.theta, &y, &cfg, &budgets, None).unwrap())
                })
            });
        });
    }
    group.finish();
}

fn num_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4)
}

criterion_group!(benches, bench_dictionary_evaluate, bench_subset_solve, bench_cv_grid);
criterion_main!(benches);
