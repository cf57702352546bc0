use std::time::Instant;

extern "C" {
    #[link_name = "mallopt"]
    fn libc_mallopt(param: i32, value: i32) -> i32;
}
use rand::SeedableRng;
use stmarl::agent::{QNetConfig, QNetParams};
use stmarl::network::{build_graph, grid_crossing_routes, grid_topology};
use stmarl::simulator::{ActionMode, FlowSpec, RouteSpec, SimConfig};
use stmarl::training::*;

fn main() {
    if std::env::var("BIGHEAP").is_ok() {
        unsafe {
            libc_mallopt(-3, 32 * 1024 * 1024); // M_MMAP_THRESHOLD
            libc_mallopt(-1, 128 * 1024 * 1024); // M_TRIM_THRESHOLD
        }
        println!("mallopt applied");
    }
    let episodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
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
    let mut target = policy.clone();
    let mut buffer = EpisodeBuffer::new(50);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
    for ep in 0..episodes {
        let t0 = Instant::now();
        let eps = epsilon_at(&schedule, ep);
        run_episode(&graph, &env, &policy, &schedule, eps, episode_seed(1, ep), &mut rng, &mut buffer).unwrap();
        let rollout = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let mut sample_time = 0.0;
        let mut target_time = 0.0;
        for _ in 0..300 {
            let ts = Instant::now();
            let windows = buffer.sample_windows(5, 16, &mut rng).unwrap();
            sample_time += ts.elapsed().as_secs_f64();
            let ts = Instant::now();
            std::hint::black_box(&windows);
            target_time += ts.elapsed().as_secs_f64();
            td_update(&mut policy, &target, &graph, &windows, &schedule).unwrap();
        }
        let updates = t1.elapsed().as_secs_f64();
        if (ep + 1) % 2 == 0 { sync_target(&policy, &mut target); }
        println!("ep {ep}: rollout {rollout:.2}s updates {updates:.1}s (sample {sample_time:.2}s)");
    }
}
