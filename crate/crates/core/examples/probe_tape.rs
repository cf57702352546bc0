use std::time::Instant;
use stmarl::numerics::{he_init, GradBuffer, Matrix, ParamStore, Tape};
use rand::SeedableRng;

fn main() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let w1 = store.add("w1", he_init(64, 128, &mut rng));
    let b1 = store.add("b1", Matrix::zeros(64, 1));
    let w2 = store.add("w2", he_init(64, 256, &mut rng));
    let b2 = store.add("b2", Matrix::zeros(64, 1));
    let x_in = he_init(128, 192, &mut rng);
    let y_in = he_init(192, 192, &mut rng);

    // mimic one decision step's heavy ops: ~10 dense (64x128 and 64x256) + glue
    let n = 100;
    let t = Instant::now();
    for _ in 0..n {
        let mut tape = Tape::new();
        let x = tape.constant(x_in.clone());
        let y = tape.constant(y_in.clone());
        let mut cur = x;
        for _ in 0..5 {
            let d1 = tape.dense(&store, w1, Some(b1), cur).unwrap();
            let a = tape.sigmoid(d1);
            let d1b = tape.dense(&store, w1, Some(b1), cur).unwrap();
            let b = tape.tanh(d1b);
            let m = tape.mul(a, b).unwrap();
            let cat = tape.concat(&[m, a, b, m]).unwrap();
            let d2 = tape.dense(&store, w2, Some(b2), cat).unwrap();
            let r = tape.relu(d2);
            cur = tape.concat(&[r, r]).unwrap();
        }
        let _ = y;
        let l = tape.sum_squares(cur);
        let mut grads = GradBuffer::zeros_like(&store);
        tape.backward(l, &store, &mut grads);
    }
    let dt = t.elapsed().as_secs_f64() / n as f64 * 1000.0;
    // flops: per iter 5 * (2*64*128*192*2 + 64*256*192*2) MACs*2
    let flops = 5.0 * (2.0*64.0*128.0*192.0 + 64.0*256.0*192.0) * 2.0 * 3.0; // fwd + ~2x bwd
    println!("synthetic tape fwd+bwd: {dt:.2} ms (~{:.1} Gflop/s)", flops / (dt/1000.0) / 1e9);

    // raw matmul reference at the same shapes
    let x192 = he_init(128, 192, &mut rng);
    let mut out = Matrix::zeros(64, 192);
    let t = Instant::now();
    let m = 3000;
    for _ in 0..m {
        store.value(w1).matmul_into(&x192, &mut out);
    }
    let dt = t.elapsed().as_secs_f64() / m as f64;
    println!("raw dense 64x128x192: {:.3} ms ({:.1} Gflop/s)", dt*1000.0, 2.0*64.0*128.0*192.0/dt/1e9);
}
