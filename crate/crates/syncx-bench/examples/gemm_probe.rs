// temporary throughput probe
use syncx_core::real::{par_gemm, MatRef};
fn main() {
    for (m, k, n) in [(18432usize, 1152usize, 128usize), (4608, 576, 128), (1152, 576, 128), (288, 1152, 256), (18432, 1152, 256)] {
        let a: Vec<f32> = (0..m * k).map(|i| (i % 97) as f32 * 0.01).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i % 89) as f32 * 0.01).collect();
        let mut c = vec![0.0f32; m * n];
        // warmup
        par_gemm(m, k, n, MatRef::row_major(&a, k), MatRef::row_major(&b, n), &mut c);
        let t0 = std::time::Instant::now();
        let iters = (2e10 / (2.0 * m as f64 * k as f64 * n as f64)).max(3.0) as usize;
        for _ in 0..iters {
            par_gemm(m, k, n, MatRef::row_major(&a, k), MatRef::row_major(&b, n), &mut c);
        }
        let dt = t0.elapsed().as_secs_f64();
        let gf = 2.0 * m as f64 * k as f64 * n as f64 * iters as f64 / dt / 1e9;
        println!("[{m}x{k}x{n}] {iters} iters in {dt:.2}s -> {gf:.1} GFLOP/s (2 threads)");
    }
}
