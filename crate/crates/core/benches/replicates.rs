//! Replicate-throughput benchmarks: sequential fan-out (threads = 1)
//! against the rayon pool (threads = 0, all cores) for both engines.
//!
//! Run with `cargo bench`. Building with `--no-default-features` removes the
//! rayon path entirely; the same benches then measure the pure sequential
//! core.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use latbranch::diffusion::DiffusionEngine;
use latbranch::field::Field;
use latbranch::geometry::{nearest_neighbor_1d, Geography, RhoSpec};
use latbranch::model::ModelParams;
use latbranch::particle::{init_particles, ParticleEngine};
use latbranch::runner::run_replicates;
use std::hint::black_box;

fn reference() -> (Geography, ModelParams, Field<f64>) {
    let geo = Geography::torus(1, 3, &nearest_neighbor_1d(), &RhoSpec::default()).unwrap();
    let params = ModelParams::exchangeable(2, 1.0, 1.0, 0.5);
    let x0 = Field::constant(3, 2, 1.0);
    (geo, params, x0)
}

fn bench_particle(c: &mut Criterion) {
    let (geo, params, x0) = reference();
    let mut group = c.benchmark_group("particle_replicates");
    for &threads in &[1usize, 0] {
        group.bench_with_input(
            BenchmarkId::new("threads", threads),
            &threads,
            |b, &threads| {
                b.iter(|| {
                    let totals = run_replicates(256, threads, |rep| {
                        let state = init_particles(&geo, &params, &x0, 0.25).unwrap();
                        let mut eng = ParticleEngine::new(&geo, &params, state, 7, rep);
                        eng.run(0.5, &[0.5]).unwrap();
                        eng.state().total_count()
                    });
                    black_box(totals)
                })
            },
        );
    }
    group.finish();
}

fn bench_diffusion(c: &mut Criterion) {
    let (geo, params, x0) = reference();
    let mut group = c.benchmark_group("diffusion_replicates");
    for &threads in &[1usize, 0] {
        group.bench_with_input(
            BenchmarkId::new("threads", threads),
            &threads,
            |b, &threads| {
                b.iter(|| {
                    let finals = run_replicates(256, threads, |rep| {
                        let mut eng =
                            DiffusionEngine::new(&geo, &params, x0.clone(), 1e-3, 7, rep);
                        eng.run(0.5, &[]).unwrap();
                        eng.state.x.total()
                    });
                    black_box(finals)
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, bench_particle, bench_diffusion);
criterion_main!(benches);
