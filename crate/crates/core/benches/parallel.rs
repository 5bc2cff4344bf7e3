//! Parallel against sequential execution of the finite-element kernel on the chamber model.
//! Without the `parallel` feature both variants run sequentially.

use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use feaflow_core::fem::{assemble_stiffness, solve_potential_with, Mesh2D};
use feaflow_core::parallel::Exec;
use feaflow_core::study::chamber_cad;

fn sigma() -> BTreeMap<String, f64> {
    [("Medium".to_string(), 1.0), ("Air".to_string(), 1e-14)].into()
}

fn contacts() -> BTreeMap<String, f64> {
    [("Contact1".to_string(), 1.0), ("Contact2".to_string(), 0.0)].into()
}

fn meshes() -> Vec<(String, Mesh2D)> {
    [(2.4e-2, 1e-3), (1.5e-3, 1.25e-4), (3.75e-4, 3.125e-5)]
        .into_iter()
        .map(|(hmax, hmin)| {
            let m = chamber_cad().mesh(hmax, hmin).expect("chamber meshes");
            (format!("{} nodes", m.nodes.len()), m)
        })
        .collect()
}

fn bench(c: &mut Criterion) {
    let meshes = meshes();
    let mut g = c.benchmark_group("assemble");
    for (label, m) in &meshes {
        let sigma_t = vec![1.0; m.triangles.len()];
        for exec in [Exec::Sequential, Exec::Parallel] {
            g.bench_with_input(BenchmarkId::new(format!("{exec:?}"), label), m, |b, m| {
                b.iter(|| assemble_stiffness(m, &sigma_t, exec))
            });
        }
    }
    g.finish();

    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for (label, m) in &meshes {
        for exec in [Exec::Sequential, Exec::Parallel] {
            g.bench_with_input(BenchmarkId::new(format!("{exec:?}"), label), m, |b, m| {
                b.iter(|| solve_potential_with(m, &sigma(), &contacts(), exec).expect("solves"))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
