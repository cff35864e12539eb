use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qprop::harness::bench::{run_matrix, run_matrix_sequential, BenchMatrix};
use qprop::harness::RunOptions;

const MATRIX: &str = "
    topology layered 3 6
    defaults cost 2
    latency 1
    workload rate 50 duration 1
    engines qprop central
    loads 25 100
    seeds 1 2 3 4
";

fn matrices(c: &mut Criterion) {
    let m = BenchMatrix::parse(MATRIX).expect("matrix");
    let opts = RunOptions::default();
    let mut group = c.benchmark_group("run_matrix");
    group.sample_size(10);
    let cells = m.cells().len();
    group.bench_with_input(BenchmarkId::new("sequential", cells), &m, |b, m| {
        b.iter(|| run_matrix_sequential(m, &opts).expect("run"))
    });
    group.bench_with_input(BenchmarkId::new("batch", cells), &m, |b, m| b.iter(|| run_matrix(m, &opts).expect("run")));
    group.finish();
}

criterion_group!(benches, matrices);
criterion_main!(benches);
