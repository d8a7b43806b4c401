use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use labnet_bench::{temperature_points, STEP_NS, T0};
use labnet_core::storage::Aggregator;
use labnet_core::{SeriesQuery, Store};

fn writes(c: &mut Criterion) {
    let points = temperature_points(10_000, 4, 2);
    let mut g = c.benchmark_group("store");
    g.throughput(Throughput::Elements(points.len() as u64));
    g.sample_size(20);
    g.bench_function("write_10k", |b| {
        b.iter_batched(
            || {
                let dir = tempfile::tempdir().unwrap();
                let store = Store::open(dir.path()).unwrap();
                (dir, store, points.clone())
            },
            |(_dir, store, pts)| store.write(pts, T0).unwrap(),
            BatchSize::PerIteration,
        )
    });
    g.finish();
}

fn queries(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    // 4 rooms × one day at 20 s
    let points = temperature_points(4 * 4_320, 4, 3);
    store.write(points, T0).unwrap();
    store.flush().unwrap();
    let end = T0 + 4_320 * STEP_NS;

    let raw = SeriesQuery::new("temperature", T0, end).tag("RoomID", "Lab01").field("T1");
    let hourly = raw.clone().aggregate(Aggregator::Mean, 3_600_000_000_000);
    c.bench_function("query/day_raw", |b| b.iter(|| store.query(black_box(&raw)).unwrap()));
    c.bench_function("query/day_hourly_mean", |b| b.iter(|| store.query(black_box(&hourly)).unwrap()));
    let all = SeriesQuery::new("temperature", T0, end);
    c.bench_function("query/all_series", |b| b.iter(|| store.query(black_box(&all)).unwrap()));
}

criterion_group!(benches, writes, queries);
criterion_main!(benches);
