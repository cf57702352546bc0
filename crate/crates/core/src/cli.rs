//! Experiment front door: config files, seeded runs for the simulate /
//! train / eval subcommands, metric and trace export, run comparison,
//! and the finite-difference verification suite.
//!
//! Every artifact is written atomically (temp file + rename) so an
//! interrupted run never leaves a corrupt summary behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    forward_step_traced, AttentionRecord, HiddenState, IndepParams, QNetConfig, QNetParams,
};
use crate::controllers::{fixed_time_action, max_pressure_action, FixedTimePlan};
use crate::features::{observe, reward};
use crate::network::{build_graph, AdjacencyGraph, TopologySpec};
use crate::numerics::{check_gradients, GradCheckReport};
use crate::simulator::{ActionMode, FlowSpec, SimConfig, SimState, TraceRecord};
use crate::training::{episode_seed, train, Env, EpisodeRow, Policy, TrainSchedule};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {path}: {msg}")]
    ParseError { path: PathBuf, msg: String },
    #[error("{key}: file not found: {path}")]
    MissingFile { key: &'static str, path: PathBuf },
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: &'static str, reason: String },
    #[error("no summary.json under {0}")]
    MissingSummary(PathBuf),
    #[error("runs are not comparable: {0}")]
    IncompatibleRuns(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Sim(#[from] crate::simulator::SimError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error(transparent)]
    Controller(#[from] crate::controllers::ControllerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    FixedTime,
    MaxPressure,
    Stmarl,
    StmarlSt,
    StmarlT,
    StmarlS,
}

impl ControllerKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().replace('-', "_").as_str() {
            "FIXEDTIME" | "FIXED_TIME" => Some(Self::FixedTime),
            "MAXPRESSURE" | "MAX_PRESSURE" => Some(Self::MaxPressure),
            "STMARL" => Some(Self::Stmarl),
            "STMARL_ST" => Some(Self::StmarlSt),
            "STMARL_T" => Some(Self::StmarlT),
            "STMARL_S" => Some(Self::StmarlS),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FixedTime => "FixedTime",
            Self::MaxPressure => "MaxPressure",
            Self::Stmarl => "STMARL",
            Self::StmarlSt => "STMARL_ST",
            Self::StmarlT => "STMARL_T",
            Self::StmarlS => "STMARL_S",
        }
    }

    pub fn is_learning(&self) -> bool {
        !matches!(self, Self::FixedTime | Self::MaxPressure)
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ScheduleFile {
    pub episodes: Option<usize>,
    pub steps_per_episode: Option<usize>,
    pub delta_t: Option<usize>,
    pub c1: Option<usize>,
    pub batch: Option<usize>,
    pub gamma: Option<f64>,
    pub buffer_episodes: Option<usize>,
    pub target_sync_episodes: Option<usize>,
    pub learning_rate: Option<f64>,
    pub grad_clip: Option<f64>,
    pub hidden: Option<usize>,
    pub reasoning_steps: Option<usize>,
    pub saturation_rate: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentFile {
    pub topology: String,
    pub flow: String,
    pub controller: String,
    #[serde(default)]
    pub action_mode: Option<String>,
    #[serde(default)]
    pub schedule: ScheduleFile,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub fixed_time_plan: Option<String>,
    /// Green seconds per phase for the default uniform plan.
    #[serde(default)]
    pub fixed_time_green: Option<u64>,
}

/// Fully validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub topology_path: PathBuf,
    pub flow_path: PathBuf,
    pub graph: AdjacencyGraph,
    pub flow: FlowSpec,
    pub controller: ControllerKind,
    pub mode: ActionMode,
    pub schedule: TrainSchedule,
    pub net: QNetConfig,
    pub sim: SimConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub plan: FixedTimePlan,
}

/// Loads and validates a config file, filling unset schedule fields with
/// the standard defaults (γ 0.99, batch 16, d 2, buffer 50 episodes).
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|_| CliError::MissingFile { key: "config", path: path.to_path_buf() })?;
    let file: ExperimentFile = serde_json::from_str(&text)
        .map_err(|e| CliError::ParseError { path: path.to_path_buf(), msg: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve_config(&file, base)
}

pub fn resolve_config(file: &ExperimentFile, base: &Path) -> Result<ExperimentConfig, CliError> {
    let resolve = |p: &str| -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    };

    let topology_path = resolve(&file.topology);
    if !topology_path.is_file() {
        return Err(CliError::MissingFile { key: "topology", path: topology_path });
    }
    let flow_path = resolve(&file.flow);
    if !flow_path.is_file() {
        return Err(CliError::MissingFile { key: "flow", path: flow_path });
    }
    let controller = ControllerKind::parse(&file.controller).ok_or(CliError::InvalidValue {
        key: "controller",
        reason: format!("unknown controller {:?}", file.controller),
    })?;
    let mode = match file.action_mode.as_deref() {
        None | Some("choose") => ActionMode::Choose,
        Some("switch") => ActionMode::Switch,
        Some(other) => {
            return Err(CliError::InvalidValue {
                key: "action_mode",
                reason: format!("expected \"choose\" or \"switch\", got {other:?}"),
            })
        }
    };
    if controller == ControllerKind::MaxPressure && mode == ActionMode::Switch {
        return Err(CliError::InvalidValue {
            key: "action_mode",
            reason: "MaxPressure picks phases directly and needs choose mode".into(),
        });
    }

    let spec = TopologySpec::from_file(&topology_path)?;
    let graph = build_graph(&spec)?;
    let flow = FlowSpec::from_file(&flow_path)?;
    flow.validate(&graph)?;

    let s = &file.schedule;
    let defaults = TrainSchedule::default();
    let schedule = TrainSchedule {
        episodes: s.episodes.unwrap_or(defaults.episodes),
        steps_per_episode: s.steps_per_episode.unwrap_or(defaults.steps_per_episode),
        delta_t: s.delta_t.unwrap_or(defaults.delta_t),
        gamma: s.gamma.unwrap_or(defaults.gamma),
        batch: s.batch.unwrap_or(defaults.batch),
        updates_per_episode: s.c1.unwrap_or(defaults.updates_per_episode),
        target_sync_episodes: s.target_sync_episodes.unwrap_or(defaults.target_sync_episodes),
        buffer_capacity: s.buffer_episodes.unwrap_or(defaults.buffer_capacity),
        adam: crate::numerics::AdamConfig {
            lr: s.learning_rate.unwrap_or(defaults.adam.lr),
            ..defaults.adam
        },
        grad_clip: s.grad_clip.unwrap_or(defaults.grad_clip),
        ..defaults
    };
    if schedule.delta_t == 0 || schedule.delta_t > schedule.steps_per_episode {
        return Err(CliError::InvalidValue {
            key: "delta_t",
            reason: format!(
                "delta_t {} must be in 1..=steps_per_episode {}",
                schedule.delta_t, schedule.steps_per_episode
            ),
        });
    }
    if !(schedule.gamma > 0.0 && schedule.gamma <= 1.0) {
        return Err(CliError::InvalidValue {
            key: "gamma",
            reason: format!("gamma {} outside (0, 1]", schedule.gamma),
        });
    }
    if file.seeds.is_empty() {
        return Err(CliError::InvalidValue { key: "seeds", reason: "at least one seed".into() });
    }

    let net = QNetConfig {
        hidden: s.hidden.unwrap_or(64),
        reasoning_steps: s.reasoning_steps.unwrap_or(2),
        use_attention: !matches!(controller, ControllerKind::StmarlS),
        use_lstm: !matches!(controller, ControllerKind::StmarlT),
        action_mode: mode,
    };
    if net.reasoning_steps == 0 {
        return Err(CliError::InvalidValue {
            key: "reasoning_steps",
            reason: "at least one relation reasoning step".into(),
        });
    }
    let sim = SimConfig {
        saturation_rate: s.saturation_rate.unwrap_or(1),
        ..SimConfig::default()
    };

    let plan = match &file.fixed_time_plan {
        Some(p) => {
            let path = resolve(p);
            if !path.is_file() {
                return Err(CliError::MissingFile { key: "fixed_time_plan", path });
            }
            let plan = FixedTimePlan::from_file(&path)?;
            plan.validate(&graph)?;
            plan
        }
        None => FixedTimePlan::uniform(&graph, file.fixed_time_green.unwrap_or(30)),
    };

    let checkpoint = match &file.checkpoint {
        Some(c) => {
            let path = resolve(c);
            if !path.is_file() {
                return Err(CliError::MissingFile { key: "checkpoint", path });
            }
            Some(path)
        }
        None => None,
    };

    Ok(ExperimentConfig {
        topology_path,
        flow_path,
        graph,
        flow,
        controller,
        mode,
        schedule,
        net,
        sim,
        seeds: file.seeds.clone(),
        out_dir: file
            .out_dir
            .as_deref()
            .map(resolve)
            .unwrap_or_else(|| base.join("runs")),
        checkpoint,
        plan,
    })
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Simulate,
    Train,
    Eval,
}

impl RunMode {
    fn name(&self) -> &'static str {
        match self {
            RunMode::Simulate => "simulate",
            RunMode::Train => "train",
            RunMode::Eval => "eval",
        }
    }
}

/// Evaluation episodes draw their simulator seed from this stream index
/// so every controller sees the same traffic for a given run seed.
const EVAL_STREAM: usize = 1_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub controller: String,
    pub mode: String,
    pub topology: String,
    pub flow: String,
    pub seeds: Vec<u64>,
    pub avg_travel_time: SummaryStat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryStat {
    pub mean: f64,
    pub std: f64,
    pub per_seed: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub avg_travel_time: f64,
    pub dir: PathBuf,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub per_seed: Vec<SeedOutcome>,
    pub summary: Summary,
    pub summary_path: PathBuf,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn metrics_csv(rows: &[EpisodeRow]) -> String {
    let mut out = String::from("episode,epsilon,avg_travel_time,sum_reward,mean_loss,wallclock_s\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            r.episode, r.epsilon, r.avg_travel_time, r.sum_reward, r.mean_loss, r.wallclock_s
        ));
    }
    out
}

/// A greedy evaluation episode that records the trace and attention
/// streams. Works for every controller kind.
struct EvalCapture {
    avg_travel_time: f64,
    sum_reward: f64,
    trace: Vec<TraceRecord>,
    attention: Vec<AttentionRecord>,
}

fn eval_with_capture(
    cfg: &ExperimentConfig,
    policy: Option<&Policy>,
    steps: usize,
    env_seed: u64,
) -> Result<EvalCapture, CliError> {
    let graph = &cfg.graph;
    let mut state = SimState::new(graph, cfg.sim.clone(), env_seed);
    let mut hidden: HiddenState =
        policy.map(|p| p.zero_hidden(graph)).unwrap_or(HiddenState { h: Vec::new(), c: Vec::new() });
    let mut trace = Vec::with_capacity(steps);
    let mut attention = Vec::new();
    let mut sum_reward = 0.0;
    let control = graph.control_nodes();

    for step in 0..steps {
        let action: Vec<usize> = match (cfg.controller, policy) {
            (ControllerKind::FixedTime, _) => control
                .iter()
                .map(|&n| fixed_time_action(&cfg.plan, graph, n, state.clock, cfg.mode))
                .collect(),
            (ControllerKind::MaxPressure, _) => {
                control.iter().map(|&n| max_pressure_action(&state, graph, n)).collect()
            }
            (_, Some(policy)) => {
                let obs = observe(&state, graph);
                match policy {
                    Policy::Graph { params, cfg: net } => {
                        let (qs, next, records) =
                            forward_step_traced(params, net, graph, &obs, &hidden, step as u64)
                                .map_err(crate::training::TrainError::from)?;
                        hidden = next;
                        attention.extend(records);
                        qs.iter().map(|q| crate::agent::greedy(q)).collect()
                    }
                    Policy::Independent { .. } => {
                        let qs = policy
                            .rollout_q(graph, &obs, &mut hidden)
                            .map_err(crate::training::TrainError::from)?;
                        qs.iter().map(|q| crate::agent::greedy(q)).collect()
                    }
                }
            }
            _ => unreachable!("learning controller without a policy"),
        };
        state.run_decision_step(graph, &action, cfg.mode, &cfg.flow)?;
        sum_reward += reward(&state, graph).total();
        trace.push(TraceRecord::capture(&state, graph));
    }
    Ok(EvalCapture {
        avg_travel_time: state.average_travel_time().unwrap_or(0.0),
        sum_reward,
        trace,
        attention,
    })
}

fn init_policy(cfg: &ExperimentConfig, seed: u64) -> Policy {
    match cfg.controller {
        ControllerKind::StmarlSt => Policy::Independent {
            params: IndepParams::init(&cfg.graph, &cfg.net, seed),
            cfg: cfg.net.clone(),
        },
        _ => Policy::Graph {
            params: QNetParams::init(&cfg.graph, &cfg.net, seed),
            cfg: cfg.net.clone(),
        },
    }
}

fn run_seed(cfg: &ExperimentConfig, mode: RunMode, seed: u64) -> Result<SeedOutcome, CliError> {
    let dir = cfg.out_dir.join(format!("seed_{seed}"));
    fs::create_dir_all(&dir)?;
    let steps = cfg.schedule.steps_per_episode;
    let env = Env { flow: cfg.flow.clone(), sim_config: cfg.sim.clone(), mode: cfg.mode };

    let mut rows: Vec<EpisodeRow> = Vec::new();
    let mut policy: Option<Policy> = None;

    if cfg.controller.is_learning() {
        let mut p = init_policy(cfg, seed);
        match mode {
            RunMode::Train => {
                let started = std::time::Instant::now();
                let result = train(&cfg.graph, &env, &cfg.schedule, p, seed)?;
                rows = result.rows;
                p = result.policy;
                let _ = started;
            }
            RunMode::Eval => {
                let ckpt = cfg.checkpoint.as_ref().ok_or(CliError::InvalidValue {
                    key: "checkpoint",
                    reason: "eval of a learning controller needs a checkpoint".into(),
                })?;
                let store = p.store_mut();
                store
                    .load_checkpoint_file(ckpt)
                    .map_err(|e| CliError::InvalidValue { key: "checkpoint", reason: e.to_string() })?;
            }
            RunMode::Simulate => {} // untrained (freshly initialized) policy
        }
        policy = Some(p);
    } else if mode == RunMode::Train {
        return Err(CliError::InvalidValue {
            key: "controller",
            reason: format!("{} does not train", cfg.controller.name()),
        });
    }

    let started = std::time::Instant::now();
    let capture =
        eval_with_capture(cfg, policy.as_ref(), steps, episode_seed(seed, EVAL_STREAM))?;

    // the eval episode is appended as the last metrics row (the only row
    // for non-training runs)
    rows.push(EpisodeRow {
        episode: rows.len(),
        epsilon: 0.0,
        avg_travel_time: capture.avg_travel_time,
        sum_reward: capture.sum_reward,
        mean_loss: 0.0,
        wallclock_s: started.elapsed().as_secs_f64(),
    });

    write_atomic(&dir.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
    let mut trace_text = String::new();
    for t in &capture.trace {
        trace_text.push_str(&serde_json::to_string(t).expect("trace serializes"));
        trace_text.push('\n');
    }
    write_atomic(&dir.join("trace.jsonl"), trace_text.as_bytes())?;
    if let Some(p) = &policy {
        if matches!(p, Policy::Graph { cfg: net, .. } if net.use_attention) {
            let mut att_text = String::new();
            for a in &capture.attention {
                att_text.push_str(&serde_json::to_string(a).expect("attention serializes"));
                att_text.push('\n');
            }
            write_atomic(&dir.join("attention.jsonl"), att_text.as_bytes())?;
        }
        p.store().save_checkpoint_file(&dir.join("checkpoint.json"))?;
    }

    Ok(SeedOutcome { seed, avg_travel_time: capture.avg_travel_time, dir })
}

/// Runs every seed (in parallel up to `STMARL_THREADS`) and writes the
/// cross-seed summary.
pub fn run(cfg: &ExperimentConfig, mode: RunMode) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let results: Vec<Result<SeedOutcome, CliError>> =
        cfg.seeds.par_iter().map(|&seed| run_seed(cfg, mode, seed)).collect();
    let mut per_seed = Vec::with_capacity(results.len());
    for r in results {
        per_seed.push(r?);
    }

    let values: Vec<f64> = per_seed.iter().map(|s| s.avg_travel_time).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    let summary = Summary {
        controller: cfg.controller.name().to_string(),
        mode: mode.name().to_string(),
        topology: cfg.topology_path.display().to_string(),
        flow: cfg.flow_path.display().to_string(),
        seeds: cfg.seeds.clone(),
        avg_travel_time: SummaryStat {
            mean,
            std: var.sqrt(),
            per_seed: per_seed
                .iter()
                .map(|s| (s.seed.to_string(), s.avg_travel_time))
                .collect(),
        },
    };
    let summary_path = cfg.out_dir.join("summary.json");
    write_atomic(
        &summary_path,
        serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes(),
    )?;
    Ok(RunOutcome { per_seed, summary, summary_path })
}

// ---------------------------------------------------------------------------
// Compare
// ---------------------------------------------------------------------------

/// Side-by-side table over completed runs, paired per seed against the
/// first run.
pub fn compare(dirs: &[PathBuf]) -> Result<String, CliError> {
    if dirs.len() < 2 {
        return Err(CliError::IncompatibleRuns("need at least two run directories".into()));
    }
    let mut summaries = Vec::new();
    for d in dirs {
        let path = d.join("summary.json");
        let text = fs::read_to_string(&path).map_err(|_| CliError::MissingSummary(d.clone()))?;
        let s: Summary = serde_json::from_str(&text)
            .map_err(|e| CliError::ParseError { path, msg: e.to_string() })?;
        summaries.push(s);
    }
    let base = &summaries[0];
    for s in &summaries[1..] {
        if s.topology != base.topology || s.flow != base.flow {
            return Err(CliError::IncompatibleRuns(format!(
                "{} ran on {}/{}, baseline on {}/{}",
                s.controller, s.topology, s.flow, base.topology, base.flow
            )));
        }
    }

    let mut out = String::from("controller,mode,mean_avg_travel_time,std,delta_vs_first\n");
    for s in &summaries {
        // paired per-seed deltas against the baseline where seeds match
        let deltas: Vec<f64> = s
            .avg_travel_time
            .per_seed
            .iter()
            .filter_map(|(seed, v)| {
                base.avg_travel_time.per_seed.get(seed).map(|b| v - b)
            })
            .collect();
        let delta = if deltas.is_empty() {
            f64::NAN
        } else {
            deltas.iter().sum::<f64>() / deltas.len() as f64
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.controller, s.mode, s.avg_travel_time.mean, s.avg_travel_time.std, delta
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

/// Randomized 3-node graph (endpoint → signal → endpoint with two-way
/// roads) used by the verification suite.
pub fn gradcheck_graph(seed: u64) -> AdjacencyGraph {
    use crate::network::{EdgeSpec, Movement, NodeKind, NodeSpec, PhaseSpec};
    let lanes = 1 + (seed % 3) as usize;
    let mut phases = BTreeMap::new();
    phases.insert(
        "1".to_string(),
        vec![
            PhaseSpec {
                id: 0,
                movements: (0..lanes)
                    .map(|l| Movement { in_edge: 0, in_lane: l, out_edge: 1 })
                    .collect(),
            },
            PhaseSpec {
                id: 1,
                movements: (0..lanes)
                    .map(|l| Movement { in_edge: 2, in_lane: l, out_edge: 3 })
                    .collect(),
            },
        ],
    );
    let spec = TopologySpec {
        nodes: vec![
            NodeSpec { id: 0, kind: NodeKind::NonControl, x: 0.0, y: 0.0 },
            NodeSpec { id: 1, kind: NodeKind::Control, x: 300.0, y: 0.0 },
            NodeSpec { id: 2, kind: NodeKind::NonControl, x: 600.0, y: 0.0 },
        ],
        edges: vec![
            EdgeSpec { id: 0, from: 0, to: 1, lanes, length: 300.0, speed: 10.0 },
            EdgeSpec { id: 1, from: 1, to: 2, lanes, length: 300.0, speed: 10.0 },
            EdgeSpec { id: 2, from: 2, to: 1, lanes, length: 300.0, speed: 10.0 },
            EdgeSpec { id: 3, from: 1, to: 0, lanes, length: 300.0, speed: 10.0 },
        ],
        phases,
    };
    build_graph(&spec).expect("gradcheck fixture is valid")
}

/// Full-network finite-difference check: STMARL forward (node init +
/// LSTM + attention + head) unrolled over `delta_t` steps on the 3-node
/// graph, randomized observations, every parameter checked.
pub fn gradcheck_full_network(
    hidden: usize,
    delta_t: usize,
    seed: u64,
) -> Result<GradCheckReport, CliError> {
    use crate::agent::{window_loss_and_grads, StepInput};
    use rand::{Rng, SeedableRng};

    let graph = gradcheck_graph(seed);
    let cfg = QNetConfig { hidden, ..QNetConfig::default() };
    let params = QNetParams::init(&graph, &cfg, seed);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0xfeed);

    // randomized but well-scaled observations
    let state = SimState::new(&graph, SimConfig::default(), seed);
    let mut window = Vec::with_capacity(delta_t);
    let mut base = observe(&state, &graph);
    for _ in 0..delta_t {
        let mut obs = base.clone();
        for feats in &mut obs.edge_features {
            for v in feats.iter_mut() {
                *v = rng.random::<f64>();
            }
        }
        window.push(StepInput::single(&obs, &graph));
        base = obs;
    }
    let control = graph.control_nodes();
    let targets: Vec<Vec<Vec<f64>>> = (0..delta_t)
        .map(|_| control.iter().map(|_| vec![rng.random::<f64>() * 2.0 - 1.0]).collect())
        .collect();
    let actions: Vec<Vec<Vec<usize>>> = (0..delta_t)
        .map(|_| {
            control
                .iter()
                .map(|&n| vec![rng.random_range(0..cfg.action_dim(&graph, n))])
                .collect()
        })
        .collect();

    let (_, grads) = window_loss_and_grads(&params, &cfg, &graph, &window, &targets, &actions)
        .map_err(crate::training::TrainError::from)?;
    let report = check_gradients(
        &params.store,
        &grads,
        |s| {
            crate::agent::window_loss_in(&params, s, &cfg, &graph, &window, &targets, &actions)
                .expect("forward succeeds")
        },
        1e-5,
        1e-4,
    );
    Ok(report)
}
