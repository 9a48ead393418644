//! Timings for the four kernels that dominate real runs: the grid
//! eigensolve, one integral-identity evaluation, cotangent-geometry
//! assembly, and a flow step. Deterministic inputs, no I/O.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use curvspec::eigen::EigenOptions;
use curvspec::engine::{evolve, RunSettings, StepControl};
use curvspec::grid::{ConformalTorusState, PeriodicGrid, ScalarField};
use curvspec::mesh::icosphere;
use curvspec::{FlowParams, GeometryState};

fn curved_torus() -> ConformalTorusState {
    let grid = PeriodicGrid::new(64, 64, std::f64::consts::TAU, std::f64::consts::TAU).unwrap();
    let w = ScalarField::from_fn(grid, |x, y| 0.2 * x.cos() * y.cos());
    let eta = ScalarField::from_fn(grid, |x, _| 0.3 * x.cos());
    ConformalTorusState::new(w, eta).unwrap()
}

fn grid_eigensolve(c: &mut Criterion) {
    let state = GeometryState::ConformalTorus(curved_torus());
    let opts = EigenOptions::default();
    c.bench_function("grid_eigensolve_64x64_4pairs", |b| {
        b.iter(|| state.eigensolve(black_box(-0.1), 4, &opts).unwrap())
    });
}

fn grid_identity(c: &mut Criterion) {
    let state = curved_torus();
    let probe = ScalarField::from_fn(*state.grid(), |x, y| {
        (x + 2.0 * y).sin() + 0.4 * (3.0 * x).cos() * y.sin()
    });
    c.bench_function("grid_bochner_identity_64x64", |b| {
        b.iter(|| state.check_bochner(black_box(&probe), -0.1).unwrap())
    });
}

fn mesh_assembly(c: &mut Criterion) {
    let base = icosphere(3, 1.0).unwrap();
    let bump: Vec<f64> = base.positions().iter().map(|p| 0.1 * p[2]).collect();
    c.bench_function("mesh_geometry_icosphere3", |b| {
        // with_w returns a fresh state, so the geometry cache never helps.
        b.iter(|| base.with_w(black_box(bump.clone())).unwrap().geometry().unwrap())
    });
}

fn flow_step(c: &mut Criterion) {
    let state = GeometryState::ConformalTorus(curved_torus());
    let params = FlowParams::new(1.0, 0.05, 0.0, 2, true).unwrap();
    let dt = 5e-4;
    let settings = RunSettings {
        horizon: dt,
        step: StepControl::Fixed(dt),
        eigenpairs: 0,
        ..RunSettings::default()
    };
    c.bench_function("flow_rk4_step_64x64", |b| {
        b.iter(|| evolve(black_box(state.clone()), &params, &settings).unwrap())
    });
}

criterion_group!(kernels, grid_eigensolve, grid_identity, mesh_assembly, flow_step);
criterion_main!(kernels);
