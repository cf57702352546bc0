use std::time::Instant;
use rand::SeedableRng;
use stmarl::agent::{QNetConfig, QNetParams};
use stmarl::network::{build_graph, grid_crossing_routes, grid_topology};
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
    let mut policy = Policy::Graph { params: QNetParams::init(&graph, &cfg, 1), cfg: cfg.clone() };
    let target = policy.clone();
    let mut buffer = EpisodeBuffer::new(50);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);

    let t = Instant::now();
    run_episode(&graph, &env, &policy, &schedule, 1.0, 0, &mut rng, &mut buffer).unwrap();
    println!("rollout (360 steps): {:.2}s", t.elapsed().as_secs_f64());

    // warm
    let windows = buffer.sample_windows(5, 16, &mut rng).unwrap();
    td_update(&mut policy, &target, &graph, &windows, &schedule).unwrap();

    let n = 20;
    let t = Instant::now();
    for _ in 0..n {
        let windows = buffer.sample_windows(5, 16, &mut rng).unwrap();
        let _ = td_loss_and_grads(&policy, &target, &graph, &windows, 0.99).unwrap();
    }
    println!("td_loss_and_grads: {:.1} ms", t.elapsed().as_secs_f64()*1000.0/n as f64);

    // target-only cost
    let t = Instant::now();
    for _ in 0..n {
        let windows = buffer.sample_windows(5, 16, &mut rng).unwrap();
        let steps: Vec<Vec<&stmarl::features::Observation>> =
            (0..5).map(|ti| windows.iter().map(|w| &w[ti].obs).collect()).collect();
        let _ = policy.window_q_values(&graph, &steps).unwrap();
    }
    println!("batched window forward (16 windows, values only): {:.1} ms", t.elapsed().as_secs_f64()*1000.0/n as f64);

    let t = Instant::now();
    for _ in 0..n {
        let windows = buffer.sample_windows(5, 16, &mut rng).unwrap();
        td_update(&mut policy, &target, &graph, &windows, &schedule).unwrap();
    }
    println!("full td_update: {:.1} ms", t.elapsed().as_secs_f64()*1000.0/n as f64);
}
