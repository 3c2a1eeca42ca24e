//! Parallel vs sequential kernels, and direct vs im2col convolution.
//!
//! `cargo bench -p tgraphx-tensor` with the default `parallel` feature runs
//! both paths; with `--no-default-features` the parallel rows fall back to
//! the sequential code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgraphx_tensor::{par, BnConfig, ConvAlgo, Mode, Shape, Tape, Tensor};

fn rand_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::new(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn modes() -> [(&'static str, bool); 2] {
    [("sequential", false), ("parallel", true)]
}

fn conv_step(algo: ConvAlgo, x: &Tensor<f32>, w: &Tensor<f32>) {
    let mut tape = Tape::new().with_conv_algo(algo);
    let xv = tape.leaf(x.clone(), true);
    let wv = tape.leaf(w.clone(), true);
    let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
    let l = tape.sum_all(y).unwrap();
    tape.backward(l).unwrap();
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = rand_tensor(Shape::new(24, 16, 32, 32), &mut rng);
    let w = rand_tensor(Shape::new(16, 16, 3, 3), &mut rng);
    let mut g = c.benchmark_group("conv3x3_fwd_bwd");
    g.sample_size(10);
    for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
        for (name, on) in modes() {
            g.bench_with_input(BenchmarkId::new(format!("{algo:?}"), name), &on, |b, &on| {
                par::set_parallel(on);
                b.iter(|| conv_step(algo, &x, &w));
            });
        }
    }
    g.finish();
}

fn batch_norm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(Shape::new(32, 16, 16, 16), &mut rng);
    let mut g = c.benchmark_group("bn_relu_pool");
    g.sample_size(20);
    for (name, on) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &on, |b, &on| {
            par::set_parallel(on);
            b.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let gm = tape.leaf(Tensor::full(Shape::vector(16), 1.0), true);
                let bt = tape.leaf(Tensor::zeros(Shape::vector(16)), true);
                let (rm, rv) = (vec![0.0; 16], vec![1.0; 16]);
                let y = tape
                    .batch_norm2d(xv, gm, bt, (&rm, &rv), Mode::Train, BnConfig::default())
                    .unwrap()
                    .out;
                let y = tape.relu(y).unwrap();
                let y = tape.max_pool2d(y, 2, 2).unwrap();
                let l = tape.sum_all(y).unwrap();
                tape.backward(l).unwrap();
            });
        });
    }
    g.finish();
}

criterion_group!(benches, conv, batch_norm);
criterion_main!(benches);
