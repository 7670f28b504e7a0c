use adbn_bench::{random_frames, random_matrix, random_rbm};
use adbn_core::oracle::{exact_log_partition, TinyModelLimit};
use adbn_core::pipeline::{FRAME_HEIGHT, FRAME_WIDTH};
use adbn_core::{FusionMode, VisibleKind};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256, 512] {
        let a = random_matrix(128, n, 1);
        let b = random_matrix(n, n, 2);
        group.throughput(Throughput::Elements((128 * n * n) as u64));
        group.bench_with_input(BenchmarkId::new("nn", n), &n, |bench, _| {
            bench.iter(|| a.matmul(black_box(&b)).unwrap())
        });
        let t = random_matrix(128, n, 3);
        group.bench_with_input(BenchmarkId::new("tn", n), &n, |bench, _| {
            bench.iter(|| a.matmul_tn(black_box(&t)).unwrap())
        });
    }
    group.finish();
}

fn fusion(c: &mut Criterion) {
    let frames = random_frames(6, FRAME_HEIGHT, FRAME_WIDTH, 4);
    let mut group = c.benchmark_group("fusion");
    for mode in FusionMode::ALL {
        group.bench_function(mode.as_str(), |bench| bench.iter(|| mode.apply(black_box(&frames)).unwrap()));
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_log_partition");
    for (m, n) in [(8, 6), (12, 8), (16, 4)] {
        let p = random_rbm(m, n, VisibleKind::Bernoulli, 5);
        group.bench_function(format!("{m}v{n}h"), |bench| {
            bench.iter(|| exact_log_partition(black_box(&p), TinyModelLimit::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, fusion, oracle);
criterion_main!(benches);
