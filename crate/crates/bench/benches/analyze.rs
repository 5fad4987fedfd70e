use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use relay_core::analyze::{analyze, compute_request_profile, group_by_rid, oracle_profile};
use relay_core::sim::{preset, simulate};
use relay_core::transport::{decode_trace, encode_trace};

fn workload() -> relay_core::Simulation {
    simulate(&preset("randread_miss").unwrap()).unwrap()
}

fn bench_analyze(c: &mut Criterion) {
    let sim = workload();
    let layers = sim.layer_map();
    let mut g = c.benchmark_group("analyze");
    g.throughput(Throughput::Elements(sim.records.len() as u64));
    g.bench_function("randread_miss/parallel", |b| b.iter(|| analyze(black_box(&sim.records), &layers)));
    let single = rayon_single();
    g.bench_function("randread_miss/one_core", |b| single.install(|| b.iter(|| analyze(black_box(&sim.records), &layers))));
    g.bench_function("randread_miss/group_only", |b| b.iter(|| group_by_rid(black_box(&sim.records))));
    g.finish();

    let grouping = group_by_rid(&sim.records);
    let mut g = c.benchmark_group("per_request");
    g.throughput(Throughput::Elements(sim.records.len() as u64));
    g.bench_function("stack_walk", |b| {
        b.iter(|| grouping.requests.iter().filter(|r| compute_request_profile(&r.events, &layers).is_ok()).count())
    });
    g.bench_function("oracle", |b| {
        b.iter(|| grouping.requests.iter().filter(|r| oracle_profile(&r.events, &layers).is_ok()).count())
    });
    g.finish();
}

fn rayon_single() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()
}

fn bench_trace_file(c: &mut Criterion) {
    let sim = workload();
    let bytes = encode_trace(&sim.records, &sim.strings).unwrap();
    let mut g = c.benchmark_group("trace_file");
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.bench_function("encode", |b| b.iter(|| encode_trace(black_box(&sim.records), &sim.strings).unwrap()));
    g.bench_function("decode", |b| b.iter_batched(|| bytes.clone(), |v| decode_trace(&v).unwrap(), BatchSize::LargeInput));
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_analyze, bench_trace_file
}
criterion_main!(benches);
