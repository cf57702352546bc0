use std::time::Instant;
use rand::SeedableRng;
use stmarl::agent::*;
use stmarl::features::Observation;
use stmarl::network::{build_graph, grid_crossing_routes, grid_topology};
use stmarl::numerics::{GradBuffer, Tape};
use stmarl::simulator::{ActionMode, FlowSpec, RouteSpec, SimConfig};
use stmarl::training::*;

fn main() {
    let spec = grid_topology(2, 2, false, 3, 300.0, 11.11);
    let graph = build_graph(&spec).unwrap();
    let routes: Vec<RouteSpec> = grid_crossing_routes(&graph)
        .into_iter().map(|edges| RouteSpec { edges, weight: 1.0 }).collect();
    let env = Env {
        flow: FlowSpec::Bernoulli { p: 0.2, max_per_second: 3, routes },
        sim_config: SimConfig::default(),
        mode: ActionMode::Choose,
    };
    let schedule = TrainSchedule::default();
    let cfg = QNetConfig::stmarl();
    let params = QNetParams::init(&graph, &cfg, 1);
    let policy = Policy::Graph { params: QNetParams::init(&graph, &cfg, 1), cfg: cfg.clone() };
    let mut buffer = EpisodeBuffer::new(50);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
    run_episode(&graph, &env, &policy, &schedule, 1.0, 0, &mut rng, &mut buffer).unwrap();
    let windows = buffer.sample_windows(5, 16, &mut rng).unwrap();
    let inputs: Vec<StepInput> = (0..5).map(|t| {
        let batch: Vec<&Observation> = windows.iter().map(|w| &w[t].obs).collect();
        StepInput::batched(&batch, &graph)
    }).collect();

    let n = 20;
    // forward only
    let t = Instant::now();
    for _ in 0..n {
        let mut tape = Tape::new();
        let _ = forward_window(&mut tape, &params, &cfg, &graph, &inputs, None).unwrap();
    }
    println!("fwd 16w x5 (with views): {:.1} ms", t.elapsed().as_secs_f64()*1000.0/n as f64);

    // forward + backward through sum of q
    let t = Instant::now();
    for _ in 0..n {
        let mut tape = Tape::new();
        let out = forward_window(&mut tape, &params, &cfg, &graph, &inputs, None).unwrap();
        let mut parts = Vec::new();
        for row in &out.qs { for &q in row { parts.push(tape.sum_squares(q)); } }
        let l = tape.sum(&parts).unwrap();
        let mut grads = GradBuffer::zeros_like(&params.store);
        tape.backward(l, &params.store, &mut grads);
    }
    println!("fwd+bwd 16w x5: {:.1} ms", t.elapsed().as_secs_f64()*1000.0/n as f64);

    let t = Instant::now();
    for _ in 0..n {
        let mut tape = Tape::new();
        let _ = forward_window(&mut tape, &params, &cfg, &graph, &inputs, None).unwrap();
    }
    println!("fwd again after bwd: {:.1} ms", t.elapsed().as_secs_f64()*1000.0/n as f64);

    // steady state: long warm, then measure each phase twice
    for round in 0..2 {
        let t = Instant::now();
        for _ in 0..n {
            let mut tape = Tape::new();
            let _ = forward_window(&mut tape, &params, &cfg, &graph, &inputs, None).unwrap();
        }
        let fwd = t.elapsed().as_secs_f64()*1000.0/n as f64;
        let t = Instant::now();
        for _ in 0..n {
            let mut tape = Tape::new();
            let out = forward_window(&mut tape, &params, &cfg, &graph, &inputs, None).unwrap();
            let mut parts = Vec::new();
            for row in &out.qs { for &q in row { parts.push(tape.sum_squares(q)); } }
            let l = tape.sum(&parts).unwrap();
            let mut grads = GradBuffer::zeros_like(&params.store);
            tape.backward(l, &params.store, &mut grads);
        }
        let both = t.elapsed().as_secs_f64()*1000.0/n as f64;
        let target = policy.clone();
        let t = Instant::now();
        for _ in 0..n {
            let w2 = buffer.sample_windows(5, 16, &mut rng).unwrap();
            let _ = td_loss_and_grads(&policy, &target, &graph, &w2, 0.99).unwrap();
        }
        let full = t.elapsed().as_secs_f64()*1000.0/n as f64;
        println!("round {round}: fwd {fwd:.1} ms, fwd+bwd {both:.1} ms, td_loss_and_grads {full:.1} ms");
    }

    // now with heavily updated parameters
    let mut policy2 = policy.clone();
    let target2 = policy.clone();
    for _ in 0..60 {
        let w2 = buffer.sample_windows(5, 16, &mut rng).unwrap();
        td_update(&mut policy2, &target2, &graph, &w2, &schedule).unwrap();
    }
    let Policy::Graph { params: trained, .. } = &policy2 else { unreachable!() };
    for round in 0..2 {
        let t = Instant::now();
        for _ in 0..n {
            let mut tape = Tape::new();
            let _ = forward_window(&mut tape, trained, &cfg, &graph, &inputs, None).unwrap();
        }
        let fwd = t.elapsed().as_secs_f64()*1000.0/n as f64;
        let t = Instant::now();
        for _ in 0..n {
            let mut tape = Tape::new();
            let out = forward_window(&mut tape, trained, &cfg, &graph, &inputs, None).unwrap();
            let mut parts = Vec::new();
            for row in &out.qs { for &q in row { parts.push(tape.sum_squares(q)); } }
            let l = tape.sum(&parts).unwrap();
            let mut grads = GradBuffer::zeros_like(&trained.store);
            tape.backward(l, &trained.store, &mut grads);
        }
        let both = t.elapsed().as_secs_f64()*1000.0/n as f64;
        println!("trained round {round}: fwd {fwd:.1} ms, fwd+bwd {both:.1} ms");
        // activation magnitude summary
        let mut tape = Tape::new();
        let out = forward_window(&mut tape, trained, &cfg, &graph, &inputs, None).unwrap();
        let m = tape.value(out.steps[4].v_in[0]);
        let mx = m.as_slice().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        println!("  max |v_in| at step 4: {mx:.2}");
    }
}
