use std::hint::black_box;
use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};

use pcond::dnmap::{default_dictionary, DictionaryOptions, DnOracle};
use pcond::enclosure::{reconstruct_hull, EnclosureOptions};
use pcond::geometry::{build_mesh, direction_grid, paint_scene, DomainSpec, Inclusion, Shape, TriMesh, Vec2};
use pcond::monotonicity::{ball_grid, scan, ScanOptions};
use pcond::par::Parallelism;
use pcond::psolver::{FeSystem, SolverConfig};
use pcond::wolff::integrate_wolff;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

/// Fresh oracles per iteration so every run pays for its solves.
fn fresh_oracles(mesh: &Arc<TriMesh>, p: f64) -> (DnOracle, DnOracle) {
    let inc = Inclusion { shape: Shape::Disk { center: Vec2::new(0.5, 0.5), radius: 0.2 }, sigma: 2.0 };
    let scene = paint_scene(mesh.clone(), &[inc], p).unwrap();
    let sys = Arc::new(FeSystem::new(mesh.clone()));
    let cfg = SolverConfig::new(p);
    let one = DnOracle::constant(sys.clone(), 1.0, cfg.clone()).unwrap();
    (DnOracle::with_system(scene, sys, cfg).unwrap(), one)
}

fn square(n: usize) -> Arc<TriMesh> {
    Arc::new(build_mesh(&DomainSpec::UnitSquare, n).unwrap())
}

fn bench_enclosure(c: &mut Criterion) {
    let p = 2.0;
    let n = 24;
    let mesh = square(n);
    let wolff = Arc::new(integrate_wolff(p, 1.0, 0.0, 1e-12).unwrap());
    let mut group = c.benchmark_group("enclosure");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, mode) in MODES {
        let opts = EnclosureOptions { parallelism: mode, ..Default::default() };
        group.bench_with_input(BenchmarkId::new(name, n), &opts, |b, opts| {
            b.iter_batched(
                || fresh_oracles(&mesh, p),
                |(o, one)| black_box(reconstruct_hull(&o, &one, &wolff, 16, opts).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn bench_monotonicity(c: &mut Criterion) {
    let p = 2.0;
    let n = 16;
    let wolff = Arc::new(integrate_wolff(p, 1.0, 0.0, 1e-12).unwrap());
    let mesh = square(n);
    let dict = default_dictionary(&mesh, &wolff, &DictionaryOptions::default()).unwrap();
    let grid = ball_grid(&mesh, 2, 2.0).unwrap();
    let dirs = direction_grid(16);
    let mut group = c.benchmark_group("monotonicity");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, mode) in MODES {
        let opts = ScanOptions { parallelism: mode, ..Default::default() };
        group.bench_with_input(BenchmarkId::new(name, n), &opts, |b, opts| {
            b.iter_batched(
                || fresh_oracles(&mesh, p),
                |(o, one)| black_box(scan(&o, &one, &grid, &dict, &dirs, opts).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, bench_enclosure, bench_monotonicity);
criterion_main!(benches);
