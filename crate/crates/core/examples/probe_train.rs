use std::time::Instant;
use stmarl::agent::{QNetConfig, QNetParams};
use stmarl::controllers::{fixed_time_action, FixedTimePlan};
use stmarl::network::{build_graph, grid_crossing_routes, grid_topology};
use stmarl::simulator::{ActionMode, FlowSpec, RouteSpec, SimConfig, SimState};
use stmarl::training::{episode_seed, eval_episode, train, Env, Policy, TrainSchedule};

fn main() {
    let episodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let spec = grid_topology(2, 2, false, 3, 300.0, 11.11);
    let graph = build_graph(&spec).unwrap();
    let routes: Vec<RouteSpec> = grid_crossing_routes(&graph)
        .into_iter()
        .map(|edges| RouteSpec { edges, weight: 1.0 })
        .collect();
    println!("routes: {}, phases at node 0: {}", routes.len(), graph.phases(0).len());
    let env = Env {
        flow: FlowSpec::Bernoulli { p: 0.2, max_per_second: 3, routes },
        sim_config: SimConfig::default(),
        mode: ActionMode::Choose,
    };
    let buffer_capacity: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let schedule = TrainSchedule { episodes, buffer_capacity, ..TrainSchedule::default() };

    // fixed-time baseline on the eval stream
    let plan = FixedTimePlan::uniform(&graph, 30);
    let control = graph.control_nodes();
    let mut state = SimState::new(&graph, SimConfig::default(), episode_seed(1, 1_000_000));
    for _ in 0..schedule.steps_per_episode {
        let a: Vec<usize> = control
            .iter()
            .map(|&n| fixed_time_action(&plan, &graph, n, state.clock, ActionMode::Choose))
            .collect();
        state.run_decision_step(&graph, &a, ActionMode::Choose, &env.flow).unwrap();
    }
    println!("fixed-time eval avg travel time: {:.1}", state.average_travel_time().unwrap());

    let cfg = QNetConfig::stmarl();
    let policy = Policy::Graph { params: QNetParams::init(&graph, &cfg, 1), cfg: cfg.clone() };
    let untrained = eval_episode(&graph, &env, &policy, schedule.steps_per_episode, episode_seed(1, 1_000_000)).unwrap();
    println!("untrained eval avg travel time: {:.1}", untrained.avg_travel_time);

    let t = Instant::now();
    let result = train(&graph, &env, &schedule, policy, 1).unwrap();
    for row in &result.rows {
        println!(
            "ep {:>3} eps {:.3} att {:>8.1} reward {:>10.0} loss {:>12.2} t {:>7.1}s",
            row.episode, row.epsilon, row.avg_travel_time, row.sum_reward, row.mean_loss, row.wallclock_s
        );
    }
    println!("total train: {:.1}s for {} episodes", t.elapsed().as_secs_f64(), episodes);
    let trained = eval_episode(&graph, &env, &result.policy, schedule.steps_per_episode, episode_seed(1, 1_000_000)).unwrap();
    println!("trained eval avg travel time: {:.1}", trained.avg_travel_time);
}
