//! Hot-path benchmarks: the per-step particle update (dominated by the
//! rank sort), the grid PDE solve, the portfolio weight sweep along one
//! path, and one fluctuation-field replica.

use criterion::{criterion_group, criterion_main, Criterion};
use rankfield_core::fluct::FluctuationContext;
use rankfield_core::model::{Coefficient, InitialLaw, ModelSpec, ObservableKind};
use rankfield_core::pde::{solve_porous_medium, GridConfig};
use rankfield_core::portfolio::{generating_from_observable, portfolio_ledger, PortfolioMode};
use rankfield_core::sim::{simulate_final, simulate_rank_based};
use std::hint::black_box;

fn quadratic_model(n: usize, t: f64, dt: f64) -> ModelSpec {
    ModelSpec {
        n,
        t_horizon: t,
        dt,
        seed: 42,
        b: Coefficient::Polynomial(vec![0.0, 1.0, -1.0]),
        sigma: Coefficient::Constant([1.0]),
        lambda: InitialLaw::Gaussian([0.0, 1.0]),
    }
}

/// Four Euler steps at n = 1000, each paying the rank sort.
fn bench_particle_steps(c: &mut Criterion) {
    let spec = quadratic_model(1000, 0.01, 0.0025);
    c.bench_function("particle_steps_n1000_x4", |b| {
        b.iter(|| simulate_final(black_box(&spec), 0).unwrap())
    });
}

/// Full conservative solve of the limit CDF on a moderate grid.
fn bench_pde_solve(c: &mut Criterion) {
    let b_coef = Coefficient::Polynomial(vec![0.0, 1.0, -1.0]);
    let sigma = Coefficient::Constant([1.0]);
    let lambda = InitialLaw::Gaussian([0.0, 1.0]);
    let grid = GridConfig {
        dx: 0.02,
        ..GridConfig::default()
    };
    let mut group = c.benchmark_group("pde");
    group.sample_size(20);
    group.bench_function("solve_dx02_t05", |bch| {
        bch.iter(|| {
            solve_porous_medium(
                black_box(&b_coef),
                black_box(&sigma),
                black_box(&lambda),
                0.5,
                &grid,
            )
            .unwrap()
        })
    });
    group.finish();
}

/// Weight sweep and excess-growth integration along a pre-simulated path.
fn bench_portfolio_ledger(c: &mut Criterion) {
    let spec = ModelSpec {
        n: 10,
        t_horizon: 0.5,
        dt: 1e-3,
        seed: 42,
        b: Coefficient::Constant([0.0]),
        sigma: Coefficient::Constant([0.5]),
        lambda: InitialLaw::Gaussian([0.0, 0.25]),
    };
    let path = simulate_rank_based(&spec, 0).unwrap();
    let obs = ObservableKind::Entropy.spec().unwrap();
    let gen = generating_from_observable(&obs, spec.n).unwrap();
    c.bench_function("portfolio_ledger_n10_500steps", |b| {
        b.iter(|| {
            portfolio_ledger(
                black_box(&path),
                &spec.sigma,
                &gen,
                PortfolioMode::Multiplicative,
            )
            .unwrap()
        })
    });
}

/// One replica of the limiting fluctuation field (bridge + noise sweep).
fn bench_fluctuation_field(c: &mut Criterion) {
    let b_coef = Coefficient::Constant([0.0]);
    let sigma = Coefficient::Constant([1.0]);
    let lambda = InitialLaw::Gaussian([0.0, 1.0]);
    let grid_cfg = GridConfig {
        dx: 0.05,
        store_every: Some(1),
        ..GridConfig::default()
    };
    let grid = solve_porous_medium(&b_coef, &sigma, &lambda, 0.25, &grid_cfg).unwrap();
    let ctx = FluctuationContext::new(&grid, &b_coef, &sigma, 0.25).unwrap();
    let mut group = c.benchmark_group("fluct");
    group.sample_size(30);
    group.bench_function("field_replica_dx05", |b| {
        b.iter(|| ctx.simulate_field(black_box(42), black_box(7)))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_particle_steps,
    bench_pde_solve,
    bench_portfolio_ledger,
    bench_fluctuation_field
);
criterion_main!(benches);
