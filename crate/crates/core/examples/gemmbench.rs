use dacorl_core::numkit::{matmul_nn, matmul_nt, matmul_tn, Mat};
use std::time::Instant;

fn bench(name: &str, f: impl Fn() -> Mat, flops: f64) {
    for _ in 0..3 { let _ = f(); }
    let t0 = Instant::now();
    let n = 100;
    for _ in 0..n { let _ = f(); }
    let el = t0.elapsed().as_secs_f64() / n as f64;
    println!("{name}: {:.2} ms  {:.1} Gflop/s", el * 1e3, flops / el / 1e9);
}

fn main() {
    let a = Mat::from_vec(505, 200, (0..505*200).map(|i| (i as f64 * 0.001).sin()).collect()).unwrap();
    let w = Mat::from_vec(200, 200, (0..200*200).map(|i| (i as f64 * 0.002).cos()).collect()).unwrap();
    let flops = 2.0 * 505.0 * 200.0 * 200.0;
    bench("nt 505x200x200", || matmul_nt(&a, &w).unwrap(), flops);
    bench("nn 505x200x200", || matmul_nn(&a, &w).unwrap(), flops);
    bench("tn 505x200x200", || matmul_tn(&a, &a).unwrap(), flops);
}
