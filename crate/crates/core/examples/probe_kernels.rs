use std::time::Instant;
use rand::SeedableRng;
use stmarl::numerics::{he_init, Matrix};

fn main() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    for b in [8usize, 16, 96, 192] {
        let w = he_init(64, 128, &mut rng);
        let x = he_init(128, b, &mut rng);
        let dy = he_init(64, b, &mut rng);
        let mut out = Matrix::zeros(64, b);
        let mut dw = Matrix::zeros(64, 128);
        let mut dx = Matrix::zeros(128, b);
        let iters = (40_000_000 / (64*128*b)).max(20);
        let t = Instant::now();
        for _ in 0..iters { w.matmul_into(&x, &mut out); }
        let f = (2*64*128*b*iters) as f64 / t.elapsed().as_secs_f64() / 1e9;
        let t = Instant::now();
        for _ in 0..iters { Matrix::grad_weights_into(&dy, &x, &mut dw); }
        let g = (2*64*128*b*iters) as f64 / t.elapsed().as_secs_f64() / 1e9;
        let t = Instant::now();
        for _ in 0..iters { dx.fill(0.0); Matrix::grad_input_into(&w, &dy, &mut dx); }
        let h = (2*64*128*b*iters) as f64 / t.elapsed().as_secs_f64() / 1e9;
        println!("b={b:>3}: fwd {f:5.1}  grad_w {g:5.1}  grad_x {h:5.1} Gflop/s");
    }
}
