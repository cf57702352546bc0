use rand::SeedableRng;
use stmarl::agent::*;
use stmarl::features::Observation;
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
    run_episode(&graph, &env, &policy, &schedule, 1.0, 0, &mut rng, &mut buffer).unwrap();
    let _ = &mut policy;
    for _ in 0..30 {
        let windows = buffer.sample_windows(5, 16, &mut rng).unwrap();
        td_update(&mut policy, &target, &graph, &windows, &schedule).unwrap();
    }
    let _ = Observation { step: 0, edge_features: vec![], raw_queues: vec![], phase_onehot: vec![] };
}
