use std::time::Instant;
use rand::SeedableRng;
use stmarl::agent::*;
use stmarl::features::observe;
use stmarl::network::{build_graph, grid_crossing_routes, grid_topology};
use stmarl::numerics::Tape;
use stmarl::simulator::{ActionMode, FlowSpec, RouteSpec, SimConfig, SimState};

fn main() {
    let spec = grid_topology(2, 2, false, 3, 300.0, 11.11);
    let graph = build_graph(&spec).unwrap();
    let routes: Vec<RouteSpec> = grid_crossing_routes(&graph)
        .into_iter().map(|edges| RouteSpec { edges, weight: 1.0 }).collect();
    let flow = FlowSpec::Bernoulli { p: 0.2, max_per_second: 3, routes };
    let mut state = SimState::new(&graph, SimConfig::default(), 1);
    let mut obs_seq = Vec::new();
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
    for step in 0..40 {
        let _ = &mut rng;
        let a = vec![step % 3; 4];
        state.run_decision_step(&graph, &a, ActionMode::Choose, &flow).unwrap();
        obs_seq.push(observe(&state, &graph));
    }
    let cfg = QNetConfig::stmarl();
    let params = QNetParams::init(&graph, &cfg, 1);

    // batch of 16 windows x 5 steps
    let n = 30;
    let t = Instant::now();
    let mut inputs_keep = Vec::new();
    for _ in 0..n {
        let mut inputs = Vec::new();
        for s in 0..5 {
            let batch: Vec<&stmarl::features::Observation> = (0..16).map(|w| &obs_seq[s + w % 20]).collect();
            inputs.push(StepInput::batched(&batch, &graph));
        }
        inputs_keep = inputs;
    }
    println!("StepInput::batched x5: {:.2} ms", t.elapsed().as_secs_f64()*1000.0/n as f64);

    let t = Instant::now();
    for _ in 0..n {
        let mut tape = Tape::new();
        let _ = forward_window(&mut tape, &params, &cfg, &graph, &inputs_keep, None).unwrap();
    }
    println!("forward_window (16w x 5 steps): {:.2} ms", t.elapsed().as_secs_f64()*1000.0/n as f64);
}
