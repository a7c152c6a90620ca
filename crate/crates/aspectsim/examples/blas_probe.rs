extern crate blas_src;
use ndarray::Array2;
use std::time::Instant;

fn main() {
    let n = 768;
    let m = 640;
    let a = Array2::<f32>::from_elem((m, n), 0.5f32);
    let b = Array2::<f32>::from_elem((n, 3072), 0.25f32);
    // warmup
    let _ = a.dot(&b);
    let t = Instant::now();
    let iters = 20;
    for _ in 0..iters {
        let c = a.dot(&b);
        std::hint::black_box(&c);
    }
    let dt = t.elapsed().as_secs_f64();
    let flops = 2.0 * m as f64 * n as f64 * 3072.0 * iters as f64;
    println!("sgemm {}x{}x3072: {:.1} GFLOP/s", m, n, flops / dt / 1e9);
}
