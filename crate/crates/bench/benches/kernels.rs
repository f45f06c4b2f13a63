use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pmfq::nn::{cross_entropy, fan_in_uniform_init, Mode, Network, NetworkSpec, Tensor};
use pmfq::quantization::{pack_quantized, unpack_quantized, QuantLevels, QuantizedWeights};
use pmfq::simplex::{softmax_into, sparsemax_into};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn projections(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("projection_rows");
    for d in [2usize, 4, 16] {
        let rows = 266_610 * 2 / d;
        let logits: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; logits.len()];
        group.bench_with_input(BenchmarkId::new("softmax", d), &d, |b, &d| {
            b.iter(|| {
                for (r, o) in logits.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                    softmax_into(r, 3.0, o);
                }
                black_box(&out);
            })
        });
        let mut scratch = Vec::new();
        group.bench_with_input(BenchmarkId::new("sparsemax", d), &d, |b, &d| {
            b.iter(|| {
                for (r, o) in logits.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                    sparsemax_into(r, 3.0, o, &mut scratch);
                }
                black_box(&out);
            })
        });
    }
    group.finish();
}

fn packing(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = 266_610;
    for levels in [QuantLevels::binary(), QuantLevels::new(vec![-2.0, -1.0, 1.0, 2.0]).unwrap()] {
        let d = levels.d();
        let idx: Vec<u16> = (0..m).map(|_| rng.random_range(0..d as u16)).collect();
        let q = QuantizedWeights::new(idx, levels).unwrap();
        let bytes = pack_quantized(&q);
        c.bench_function(&format!("pack_d{d}"), |b| b.iter(|| black_box(pack_quantized(black_box(&q)))));
        c.bench_function(&format!("unpack_d{d}"), |b| {
            b.iter(|| black_box(unpack_quantized(black_box(&bytes)).unwrap()))
        });
    }
}

fn lenet(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Network::new(NetworkSpec::lenet300()).unwrap();
    let params = fan_in_uniform_init(&net, &mut rng);
    let batch = 100;
    let x = Tensor::matrix(batch, 784, (0..batch * 784).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..batch).map(|i| i % 10).collect();
    c.bench_function("lenet300_forward_b100", |b| {
        b.iter(|| black_box(net.forward(&params, &x, Mode::Train).unwrap().0))
    });
    c.bench_function("lenet300_forward_backward_b100", |b| {
        b.iter(|| {
            let (logits, cache) = net.forward(&params, &x, Mode::Train).unwrap();
            let (_, dlogits) = cross_entropy(&logits, &labels).unwrap();
            black_box(cache.backward(&dlogits).unwrap())
        })
    });
}

criterion_group!(benches, projections, packing, lenet);
criterion_main!(benches);
