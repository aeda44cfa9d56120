use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rrto_core::oss::{operator_sequence_search, oracle_search, IncrementalSearch, OssConfig};
use rrto_core::trace::TraceLog;
use rrto_core::workloads::{random_profile, record_locally, Variant, Workload};

fn log_of(workload: &Workload, n: usize) -> TraceLog {
    let stream = workload.stream(n, 1, Variant::Static);
    record_locally(stream.calls(), &mut workload.device())
}

fn full_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("search");
    group.sample_size(10);
    for name in ["tiny3", "multicopy", "resnet_s", "kapao"] {
        let log = log_of(&Workload::load(name).unwrap(), 3);
        group.bench_with_input(BenchmarkId::new("log", name), &log, |b, log| {
            b.iter(|| operator_sequence_search(black_box(log), &OssConfig::default()))
        });
    }
    group.finish();
}

/// Cost of following a recording: observe every entry, search at each new
/// end boundary.
fn incremental(c: &mut Criterion) {
    let log = log_of(&Workload::load("kapao").unwrap(), 4);
    let mut group = c.benchmark_group("incremental");
    group.sample_size(10);
    group.bench_function("kapao", |b| {
        b.iter(|| {
            let mut search = IncrementalSearch::new(OssConfig::default());
            let entries = log.entries();
            for (i, e) in entries.iter().enumerate() {
                search.observe(e);
                if let Some(hit) = search.search(&entries[..=i]) {
                    return Some(hit);
                }
            }
            None
        })
    });
    group.finish();
}

fn against_oracle(c: &mut Criterion) {
    let workload = Workload::new(random_profile(11)).unwrap();
    let log = log_of(&workload, 5);
    let mut group = c.benchmark_group("random");
    group.bench_function("search", |b| b.iter(|| operator_sequence_search(black_box(&log), &OssConfig::default())));
    group.bench_function("oracle", |b| b.iter(|| oracle_search(black_box(&log), &OssConfig::default())));
    group.finish();
}

criterion_group!(benches, full_search, incremental, against_oracle);
criterion_main!(benches);
