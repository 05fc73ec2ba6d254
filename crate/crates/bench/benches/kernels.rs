use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tpem_bench::{certificate, mesh_system, pulse, SCALES};
use tpem_core::impedance::k_matrix_formulas;
use tpem_core::{build_complex, freq_solve, kcheck, simulate, BoundaryTriple, FreqOptions, FrequencyPoint, MeshBdSpaces, SimulateOptions};

fn boundary(c: &mut Criterion) {
    let t = BoundaryTriple::synthetic([3, 4, 5], 11, SCALES);
    let z = FrequencyPoint::from_parts(2.0, 1.5).unwrap();
    c.bench_function("k_matrix_formulas 3,4,5", |b| b.iter(|| k_matrix_formulas(black_box(&t), z).unwrap()));
    c.bench_function("kcheck 10 trials", |b| b.iter(|| kcheck([3, 4, 5], 10, 42, None).unwrap()));
}

fn complex(c: &mut Criterion) {
    let mut g = c.benchmark_group("mesh");
    g.sample_size(10);
    for n in [2, 4] {
        g.bench_function(format!("complex + bd {n}^3"), |b| {
            b.iter(|| {
                let cx = build_complex([n; 3], [1.0; 3]).unwrap();
                MeshBdSpaces::build(&cx).unwrap()
            })
        });
    }
    g.finish();
}

fn solvers(c: &mut Criterion) {
    let sys = mesh_system(2, 5);
    let cert = certificate(&sys);
    let nu = cert.nu_min.unwrap();
    let f = pulse(&sys, 100, 0.02);
    let opts = SimulateOptions { nu, certificate: Some(&cert), override_certificate: false };
    let mut g = c.benchmark_group("solve 2^3");
    g.sample_size(10);
    g.bench_function("time", |b| b.iter(|| simulate(&sys, &f, opts).unwrap()));
    g.bench_function("freq", |b| b.iter(|| freq_solve(&sys, &f, opts, FreqOptions::default()).unwrap()));
    g.finish();
}

criterion_group!(benches, boundary, complex, solvers);
criterion_main!(benches);
