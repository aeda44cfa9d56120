use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use rrto_core::bench::{run_scenario, Mode, ScenarioConfig};
use rrto_core::oss::{operator_sequence_search, OssConfig};
use rrto_core::transport::wire::{decode, encode, Message, ReplayProgram};
use rrto_core::workloads::{record_locally, Variant, Workload};

fn scenarios(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenario");
    group.sample_size(10);
    for mode in Mode::ALL {
        let cfg = ScenarioConfig::new("resnet_s", mode, 10, 1);
        group.bench_with_input(BenchmarkId::new("resnet_s", mode), &cfg, |b, cfg| {
            b.iter(|| run_scenario(black_box(cfg)).unwrap())
        });
    }
    group.finish();
}

fn program_codec(c: &mut Criterion) {
    let workload = Workload::load("kapao").unwrap();
    let stream = workload.stream(3, 1, Variant::Static);
    let log = record_locally(stream.calls(), &mut workload.device());
    let ios = operator_sequence_search(&log, &OssConfig::default()).unwrap();
    let program = ReplayProgram::from_window(ios.hit().start, &log.entries()[ios.hit().start..=ios.hit().end()]);
    let msg = Message::StartReplay {
        digest: program.digest(),
        program: Some(program),
        input: vec![0; 16384],
    };
    let frame = encode(&msg);
    let mut group = c.benchmark_group("program");
    group.throughput(Throughput::Bytes(frame.len() as u64));
    group.bench_function("encode", |b| b.iter(|| encode(black_box(&msg))));
    group.bench_function("decode", |b| b.iter(|| decode(black_box(&frame)).unwrap()));
    group.finish();
}

criterion_group!(benches, scenarios, program_codec);
criterion_main!(benches);
