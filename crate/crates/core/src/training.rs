//! End-to-end Q-learning: episode rollout with the LSTM state threaded
//! across the episode, a replay memory of whole episodes, windowed TD
//! updates unrolled over the temporal interval Δt, periodic target
//! synchronization, and the linear exploration schedule.

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{
    act, forward_step, independent_forward, AgentError, HiddenState, IndepParams, QNetConfig,
    QNetParams, StepInput,
};
use crate::features::{observe, reward, Observation, RewardVector};
use crate::network::AdjacencyGraph;
use crate::numerics::{AdamConfig, GradBuffer, Matrix, ParamStore, Tape};
use crate::simulator::{ActionMode, FlowSpec, SimConfig, SimError, SimState};

/// Windows per rayon task during a TD update; fixed so gradient
/// summation order (and therefore every metric) is independent of the
/// machine's thread count.
const TD_CHUNK: usize = 16;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("buffer holds no episode of length >= {0}")]
    InsufficientData(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// One stored step: (o_t, a_t, r_t, o_{t+1}).
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub action: Vec<usize>,
    pub reward: RewardVector,
    pub next_obs: Observation,
    pub terminal: bool,
}

/// Replay memory of whole episodes; windows never span episode
/// boundaries and eviction is oldest-episode-first.
#[derive(Debug, Clone)]
pub struct EpisodeBuffer {
    episodes: VecDeque<Vec<Transition>>,
    capacity: usize,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Self {
        EpisodeBuffer { episodes: VecDeque::new(), capacity }
    }

    pub fn push_episode(&mut self, episode: Vec<Transition>) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &[Transition]> {
        self.episodes.iter().map(Vec::as_slice)
    }

    /// Samples `batch` windows of `delta_t` consecutive transitions, each
    /// entirely inside one episode, start index uniform.
    pub fn sample_windows(
        &self,
        delta_t: usize,
        batch: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<&[Transition]>, TrainError> {
        let eligible: Vec<&Vec<Transition>> =
            self.episodes.iter().filter(|e| e.len() >= delta_t).collect();
        if eligible.is_empty() || delta_t == 0 {
            return Err(TrainError::InsufficientData(delta_t));
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let ep = eligible[rng.random_range(0..eligible.len())];
            let start = rng.random_range(0..=ep.len() - delta_t);
            out.push(&ep[start..start + delta_t]);
        }
        Ok(out)
    }
}

/// Training schedule; defaults are the paper's parameter table with the
/// update budget C1 scaled to desk size (the CLI exposes it).
#[derive(Debug, Clone)]
pub struct TrainSchedule {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub delta_t: usize,
    pub gamma: f64,
    pub batch: usize,
    /// C1: TD updates after each episode.
    pub updates_per_episode: usize,
    /// Target network refresh cadence, in episodes.
    pub target_sync_episodes: usize,
    pub buffer_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_episodes: usize,
    pub adam: AdamConfig,
    pub grad_clip: f64,
    /// Mark the last transition of each episode terminal (off: the
    /// time-limited episode bootstraps normally).
    pub terminal_bootstrap_cutoff: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            episodes: 60,
            steps_per_episode: 360,
            delta_t: 5,
            gamma: 0.99,
            batch: 16,
            updates_per_episode: 300,
            target_sync_episodes: 2,
            buffer_capacity: 50,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_episodes: 10,
            adam: AdamConfig::default(),
            grad_clip: 10.0,
            terminal_bootstrap_cutoff: false,
        }
    }
}

/// ε at a given episode index: linear from eps_start at episode 0 to
/// eps_end at episode `eps_decay_episodes`, constant afterwards.
pub fn epsilon_at(schedule: &TrainSchedule, episode: usize) -> f64 {
    let n = schedule.eps_decay_episodes as f64;
    if n == 0.0 {
        return schedule.eps_end;
    }
    let frac = (episode as f64 / n).min(1.0);
    schedule.eps_start + (schedule.eps_end - schedule.eps_start) * frac
}

/// The environment bundle a controller runs against.
#[derive(Debug, Clone)]
pub struct Env {
    pub flow: FlowSpec,
    pub sim_config: SimConfig,
    pub mode: ActionMode,
}

/// A learnable Q-function: the graph network (STMARL and its S/T
/// ablations) or the independent shared-parameter DQN (STMARL-ST).
#[derive(Debug, Clone)]
pub enum Policy {
    Graph { params: QNetParams, cfg: QNetConfig },
    Independent { params: IndepParams, cfg: QNetConfig },
}

impl Policy {
    pub fn cfg(&self) -> &QNetConfig {
        match self {
            Policy::Graph { cfg, .. } | Policy::Independent { cfg, .. } => cfg,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Policy::Graph { params, .. } => &params.store,
            Policy::Independent { params, .. } => &params.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Policy::Graph { params, .. } => &mut params.store,
            Policy::Independent { params, .. } => &mut params.store,
        }
    }

    pub fn sync_from(&mut self, src: &Policy) {
        let src_store = src.store().clone();
        self.store_mut().copy_values_from(&src_store);
    }

    pub fn zero_hidden(&self, graph: &AdjacencyGraph) -> HiddenState {
        match self {
            Policy::Graph { params, .. } => HiddenState::zeros(graph, params.hidden, 1),
            Policy::Independent { .. } => HiddenState { h: Vec::new(), c: Vec::new() },
        }
    }

    /// Q rows for one rollout step, advancing the recurrent carry.
    pub fn rollout_q(
        &self,
        graph: &AdjacencyGraph,
        obs: &Observation,
        hidden: &mut HiddenState,
    ) -> Result<Vec<Vec<f64>>, AgentError> {
        match self {
            Policy::Graph { params, cfg } => {
                let (qs, next) = forward_step(params, cfg, graph, obs, hidden)?;
                *hidden = next;
                Ok(qs)
            }
            Policy::Independent { params, cfg } => {
                let mut tape = Tape::new();
                let qs = independent_forward(&mut tape, params, cfg, graph, &[obs])?;
                Ok(qs
                    .into_iter()
                    .map(|q| {
                        let m = tape.value(q);
                        (0..m.rows()).map(|r| m.get(r, 0)).collect()
                    })
                    .collect())
            }
        }
    }

    /// Forward a batch of observation sequences from a zero initial
    /// state, returning plain Q matrices [|A_i| × B] per step per slot.
    pub fn window_q_values(
        &self,
        graph: &AdjacencyGraph,
        steps: &[Vec<&Observation>],
    ) -> Result<Vec<Vec<Matrix>>, AgentError> {
        let mut tape = Tape::new();
        let ids = self.window_q_ids(&mut tape, graph, steps)?;
        Ok(ids
            .into_iter()
            .map(|row| row.into_iter().map(|id| tape.value(id).clone()).collect())
            .collect())
    }

    fn window_q_ids(
        &self,
        tape: &mut Tape,
        graph: &AdjacencyGraph,
        steps: &[Vec<&Observation>],
    ) -> Result<Vec<Vec<usize>>, AgentError> {
        match self {
            Policy::Graph { params, cfg } => {
                let inputs: Vec<StepInput> =
                    steps.iter().map(|batch| StepInput::batched(batch, graph)).collect();
                let out = crate::agent::forward_window_in(
                    tape,
                    params,
                    &params.store,
                    cfg,
                    graph,
                    &inputs,
                    None,
                    false,
                )?;
                Ok(out.qs)
            }
            Policy::Independent { params, cfg } => {
                let mut qs = Vec::with_capacity(steps.len());
                for batch in steps {
                    qs.push(independent_forward(tape, params, cfg, graph, batch)?);
                }
                Ok(qs)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeStats {
    pub avg_travel_time: f64,
    pub sum_reward: f64,
    pub spawned: u64,
    pub completed: u64,
}

/// Runs one episode of `steps_per_episode` decision steps, storing every
/// transition. The recurrent state threads across the whole episode; the
/// ε-greedy draws come from `rng`.
pub fn run_episode(
    graph: &AdjacencyGraph,
    env: &Env,
    policy: &Policy,
    schedule: &TrainSchedule,
    epsilon: f64,
    env_seed: u64,
    rng: &mut impl Rng,
    buffer: &mut EpisodeBuffer,
) -> Result<EpisodeStats, TrainError> {
    let mut state = SimState::new(graph, env.sim_config.clone(), env_seed);
    let mut hidden = policy.zero_hidden(graph);
    let mut obs = observe(&state, graph);
    let mut episode = Vec::with_capacity(schedule.steps_per_episode);
    let mut sum_reward = 0.0;

    for t in 0..schedule.steps_per_episode {
        let qs = policy.rollout_q(graph, &obs, &mut hidden)?;
        let action: Vec<usize> = qs.iter().map(|q| act(q, epsilon, rng)).collect();
        state.run_decision_step(graph, &action, env.mode, &env.flow)?;
        let r = reward(&state, graph);
        let next_obs = observe(&state, graph);
        sum_reward += r.total();
        episode.push(Transition {
            obs,
            action,
            reward: r,
            next_obs: next_obs.clone(),
            terminal: schedule.terminal_bootstrap_cutoff && t + 1 == schedule.steps_per_episode,
        });
        obs = next_obs;
    }

    let stats = EpisodeStats {
        avg_travel_time: state.average_travel_time().unwrap_or(0.0),
        sum_reward,
        spawned: state.spawned_count,
        completed: state.completed_count,
    };
    buffer.push_episode(episode);
    Ok(stats)
}

/// Greedy evaluation episode (ε = 0, nothing stored).
pub fn eval_episode(
    graph: &AdjacencyGraph,
    env: &Env,
    policy: &Policy,
    steps: usize,
    env_seed: u64,
) -> Result<EpisodeStats, TrainError> {
    let mut state = SimState::new(graph, env.sim_config.clone(), env_seed);
    let mut hidden = policy.zero_hidden(graph);
    let mut sum_reward = 0.0;
    let mut obs = observe(&state, graph);
    for _ in 0..steps {
        let qs = policy.rollout_q(graph, &obs, &mut hidden)?;
        let action: Vec<usize> = qs.iter().map(|q| crate::agent::greedy(q)).collect();
        state.run_decision_step(graph, &action, env.mode, &env.flow)?;
        sum_reward += reward(&state, graph).total();
        obs = observe(&state, graph);
    }
    Ok(EpisodeStats {
        avg_travel_time: state.average_travel_time().unwrap_or(0.0),
        sum_reward,
        spawned: state.spawned_count,
        completed: state.completed_count,
    })
}

/// TD targets y over a window batch: y[t][slot][b] = r + γ·max_a'
/// Q_target(o_{t+1}) with y = r at terminal steps. The target network
/// forwards the o_{t+1} sequence from a zero initial state.
fn td_targets(
    target: &Policy,
    graph: &AdjacencyGraph,
    windows: &[&[Transition]],
    gamma: f64,
) -> Result<Vec<Vec<Vec<f64>>>, TrainError> {
    let delta_t = windows[0].len();
    let next_steps: Vec<Vec<&Observation>> = (0..delta_t)
        .map(|t| windows.iter().map(|w| &w[t].next_obs).collect())
        .collect();
    let q_next = target.window_q_values(graph, &next_steps)?;
    let slots = q_next[0].len();
    let mut y = vec![vec![vec![0.0; windows.len()]; slots]; delta_t];
    for t in 0..delta_t {
        for slot in 0..slots {
            let m = &q_next[t][slot];
            for (b, w) in windows.iter().enumerate() {
                let r = w[t].reward.0[slot];
                y[t][slot][b] = if w[t].terminal {
                    r
                } else {
                    let mut best = f64::NEG_INFINITY;
                    for a in 0..m.rows() {
                        best = best.max(m.get(a, b));
                    }
                    r + gamma * best
                };
            }
        }
    }
    Ok(y)
}

/// Squared TD error summed over agents and window steps, averaged over
/// the batch, with exact gradients through the recurrent unroll.
pub fn td_loss_and_grads(
    policy: &Policy,
    target: &Policy,
    graph: &AdjacencyGraph,
    windows: &[&[Transition]],
    gamma: f64,
) -> Result<(f64, GradBuffer), TrainError> {
    let batch = windows.len();
    // compact the sampled transitions: replayed observations live all
    // over the aging buffer, and the repeated gathers during the update
    // are much cheaper against fresh contiguous copies
    let compacted: Vec<Vec<Transition>> = windows.iter().map(|w| w.to_vec()).collect();
    let windows: Vec<&[Transition]> = compacted.iter().map(|v| v.as_slice()).collect();
    let windows = windows.as_slice();

    // fixed-size chunks keep the gradient reduction order machine
    // independent
    let chunks: Vec<&[&[Transition]]> = windows.chunks(TD_CHUNK).collect();

    struct ChunkForward {
        tape: Tape,
        /// Q(a_t) per step per slot, each [1 × chunk].
        picked: Vec<Vec<usize>>,
    }

    let phase_timer = std::env::var("STMARL_PHASE_TIMING").is_ok();
    let t0 = std::time::Instant::now();
    // phase 1: the target pass and the online forwards are independent
    let (y, fwds): (Result<_, TrainError>, Vec<Result<ChunkForward, TrainError>>) = rayon::join(
        || td_targets(target, graph, windows, gamma),
        || {
            chunks
                .par_iter()
                .map(|chunk| {
                    let delta_t = chunk[0].len();
                    let steps: Vec<Vec<&Observation>> = (0..delta_t)
                        .map(|t| chunk.iter().map(|w| &w[t].obs).collect())
                        .collect();
                    let mut tape = Tape::new();
                    let q_ids = policy.window_q_ids(&mut tape, graph, &steps)?;
                    let mut picked = Vec::with_capacity(q_ids.len());
                    for (t, row) in q_ids.iter().enumerate() {
                        let mut per_slot = Vec::with_capacity(row.len());
                        for (slot, &q) in row.iter().enumerate() {
                            let actions: Vec<usize> =
                                chunk.iter().map(|w| w[t].action[slot]).collect();
                            per_slot.push(
                                tape.gather_per_column(q, actions).map_err(AgentError::from)?,
                            );
                        }
                        picked.push(per_slot);
                    }
                    Ok(ChunkForward { tape, picked })
                })
                .collect()
        },
    );
    let y = y?;
    let t1 = std::time::Instant::now();

    // phase 2: loss and seeded backward per chunk; the seed for Q(a) is
    // dL/dq = 2(q − y)/batch from the squared TD error
    let results: Vec<Result<(f64, GradBuffer), TrainError>> = fwds
        .into_par_iter()
        .enumerate()
        .map(|(ci, fwd)| {
            let fwd = fwd?;
            let offset = ci * TD_CHUNK;
            let chunk_len = chunks[ci].len();
            let mut loss = 0.0;
            let mut seeds: Vec<(usize, Matrix)> = Vec::new();
            for (t, row) in fwd.picked.iter().enumerate() {
                for (slot, &picked) in row.iter().enumerate() {
                    let q = fwd.tape.value(picked);
                    let mut seed = Matrix::zeros(1, chunk_len);
                    for b in 0..chunk_len {
                        let diff = q.get(0, b) - y[t][slot][offset + b];
                        loss += diff * diff / batch as f64;
                        seed.set(0, b, 2.0 * diff / batch as f64);
                    }
                    seeds.push((picked, seed));
                }
            }
            let mut grads = GradBuffer::zeros_like(policy.store());
            fwd.tape.backward_seeded(seeds, policy.store(), &mut grads);
            Ok((loss, grads))
        })
        .collect();

    let mut loss = 0.0;
    let mut grads = GradBuffer::zeros_like(policy.store());
    for r in results {
        let (l, g) = r?;
        loss += l;
        grads.add_in_place(&g);
    }
    if phase_timer {
        eprintln!(
            "phase1(fwd+target) {:.1} ms, phase2(bwd) {:.1} ms",
            (t1 - t0).as_secs_f64() * 1000.0,
            t1.elapsed().as_secs_f64() * 1000.0
        );
    }
    Ok((loss, grads))
}

/// One optimization step: loss + gradients, global-norm clip, Adam.
pub fn td_update(
    policy: &mut Policy,
    target: &Policy,
    graph: &AdjacencyGraph,
    windows: &[&[Transition]],
    schedule: &TrainSchedule,
) -> Result<f64, TrainError> {
    let (loss, grads) = td_loss_and_grads(policy, target, graph, windows, schedule.gamma)?;
    let store = policy.store_mut();
    store.accumulate(&grads);
    store.clip_gradients(schedule.grad_clip);
    store.adam_step(&schedule.adam);
    Ok(loss)
}

/// Copies online parameters into the target network.
pub fn sync_target(policy: &Policy, target: &mut Policy) {
    target.sync_from(policy);
}

#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub episode: usize,
    pub epsilon: f64,
    pub avg_travel_time: f64,
    pub sum_reward: f64,
    pub mean_loss: f64,
    pub wallclock_s: f64,
}

pub struct TrainResult {
    pub policy: Policy,
    pub rows: Vec<EpisodeRow>,
}

fn mix_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the simulator of a given episode, derived from the run seed.
pub fn episode_seed(base: u64, episode: usize) -> u64 {
    mix_seed(base, 0x5157_0000 + episode as u64)
}

/// The full training loop: for each episode, one rollout followed by C1
/// TD updates, with the target network refreshed on its cadence.
pub fn train(
    graph: &AdjacencyGraph,
    env: &Env,
    schedule: &TrainSchedule,
    mut policy: Policy,
    seed: u64,
) -> Result<TrainResult, TrainError> {
    let mut target = policy.clone();
    let mut buffer = EpisodeBuffer::new(schedule.buffer_capacity);
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xac7));
    let mut rows = Vec::with_capacity(schedule.episodes);
    let started = Instant::now();

    for episode in 0..schedule.episodes {
        let epsilon = epsilon_at(schedule, episode);
        let stats = run_episode(
            graph,
            env,
            &policy,
            schedule,
            epsilon,
            episode_seed(seed, episode),
            &mut rng,
            &mut buffer,
        )?;

        let mut losses = Vec::with_capacity(schedule.updates_per_episode);
        for _ in 0..schedule.updates_per_episode {
            let windows = buffer.sample_windows(schedule.delta_t, schedule.batch, &mut rng)?;
            losses.push(td_update(&mut policy, &target, graph, &windows, schedule)?);
        }
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };

        if (episode + 1) % schedule.target_sync_episodes == 0 {
            sync_target(&policy, &mut target);
        }

        rows.push(EpisodeRow {
            episode,
            epsilon,
            avg_travel_time: stats.avg_travel_time,
            sum_reward: stats.sum_reward,
            mean_loss,
            wallclock_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainResult { policy, rows })
}
