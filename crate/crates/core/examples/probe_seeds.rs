use std::time::Instant;
use rayon::prelude::*;
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
    let schedule = TrainSchedule { episodes: 3, ..TrainSchedule::default() };
    let cfg = QNetConfig::stmarl();

    // sequential
    let t = Instant::now();
    for seed in [1u64, 2] {
        let policy = Policy::Graph { params: QNetParams::init(&graph, &cfg, seed), cfg: cfg.clone() };
        train(&graph, &env, &schedule, policy, seed).unwrap();
    }
    let seq = t.elapsed().as_secs_f64();
    println!("2 seeds x3 ep sequential: {seq:.1}s");

    // parallel
    let t = Instant::now();
    [3u64, 4].par_iter().for_each(|&seed| {
        let policy = Policy::Graph { params: QNetParams::init(&graph, &cfg, seed), cfg: cfg.clone() };
        train(&graph, &env, &schedule, policy, seed).unwrap();
    });
    let par = t.elapsed().as_secs_f64();
    println!("2 seeds x3 ep parallel:   {par:.1}s (scaling {:.2}x)", seq / par);
}
