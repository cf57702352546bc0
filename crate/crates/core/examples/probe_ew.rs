use std::time::Instant;
use rand::SeedableRng;
use stmarl::numerics::{he_init, ParamStore, Tape};

fn main() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    let store = ParamStore::new();
    let x_in = he_init(64, 192, &mut rng);
    let n = 2000;
    for (name, f) in [
        ("sigmoid", 0usize), ("tanh", 1), ("elu", 2), ("relu", 3), ("mul", 4), ("concat", 5), ("softmax-12x16", 6),
    ] {
        let t = Instant::now();
        for _ in 0..n {
            let mut tape = Tape::new();
            let x = tape.constant(x_in.clone());
            let _ = match f {
                0 => tape.sigmoid(x),
                1 => tape.tanh(x),
                2 => tape.elu(x),
                3 => tape.relu(x),
                4 => tape.mul(x, x).unwrap(),
                5 => tape.concat(&[x, x]).unwrap(),
                _ => {
                    let s = tape.constant(he_init(12, 16, &mut rng.clone()));
                    tape.softmax(s).unwrap()
                }
            };
        }
        println!("{name:>14}: {:.1} µs/op ([64x192])", t.elapsed().as_secs_f64()/n as f64*1e6);
    }
    let _ = store;
}
