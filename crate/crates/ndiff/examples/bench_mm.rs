use std::time::Instant;
use tabula_ndiff::{tensor_matmul, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    // PointNet-ish: batch 16 x 4096 points, 64 -> 96
    let a = Tensor::uniform(&[16 * 4096, 64], 1.0, &mut rng);
    let b = Tensor::uniform(&[64, 96], 1.0, &mut rng);
    let t0 = Instant::now();
    let mut acc = 0.0f32;
    let iters = 20;
    for _ in 0..iters {
        let c = tensor_matmul(&a, &b);
        acc += c.data()[0];
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    let flops = 2.0 * (16.0 * 4096.0) * 64.0 * 96.0;
    println!("matmul 65536x64x96: {:.1} ms, {:.2} GFLOP/s (acc {acc})", dt * 1e3, flops / dt / 1e9);
}
