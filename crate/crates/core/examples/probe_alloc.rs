use std::time::Instant;
fn main() {
    let n = 5000;
    let len = 64 * 192;
    let src: Vec<f64> = (0..len).map(|i| (i as f64) * 0.001 - 5.0).collect();

    // 1. pure compute into a preallocated buffer
    let mut dst = vec![0.0f64; len];
    let t = Instant::now();
    for _ in 0..n {
        for i in 0..len {
            dst[i] = if src[i] > 0.0 { src[i] } else { 0.0 };
        }
        std::hint::black_box(&dst);
    }
    println!("relu in-place: {:.1} µs", t.elapsed().as_secs_f64()/n as f64*1e6);

    // 2. alloc + collect each time
    let t = Instant::now();
    for _ in 0..n {
        let v: Vec<f64> = src.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        std::hint::black_box(&v);
    }
    println!("relu alloc+collect: {:.1} µs", t.elapsed().as_secs_f64()/n as f64*1e6);

    // 3. sigmoid compute only
    let t = Instant::now();
    for _ in 0..n {
        for i in 0..len {
            dst[i] = 1.0 / (1.0 + (-src[i]).exp());
        }
        std::hint::black_box(&dst);
    }
    println!("sigmoid in-place: {:.1} µs", t.elapsed().as_secs_f64()/n as f64*1e6);

    // 4. tanh
    let t = Instant::now();
    for _ in 0..n {
        for i in 0..len {
            dst[i] = src[i].tanh();
        }
        std::hint::black_box(&dst);
    }
    println!("tanh in-place: {:.1} µs", t.elapsed().as_secs_f64()/n as f64*1e6);

    // 5. clone
    let t = Instant::now();
    for _ in 0..n {
        let v = src.clone();
        std::hint::black_box(&v);
    }
    println!("clone 98KB: {:.1} µs", t.elapsed().as_secs_f64()/n as f64*1e6);
}
