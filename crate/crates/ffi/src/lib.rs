//! C ABI over the traffic-signal control laboratory.
//!
//! Handles are opaque boxes owned by the caller and released with the
//! matching `_free` function. Every handle is self-contained (a
//! simulator carries its own copy of the graph), so handle lifetimes are
//! independent. Fallible functions return a status code; the message for
//! the most recent failure on the current thread is available through
//! [`stmarl_last_error`].

use std::cell::RefCell;
use std::ffi::CStr;
use std::os::raw::{c_char, c_int};
use std::path::Path;

use stmarl::agent::{greedy, HiddenState, IndepParams, QNetConfig, QNetParams};
use stmarl::cli::ControllerKind;
use stmarl::controllers::{fixed_time_action, max_pressure_action, FixedTimePlan};
use stmarl::features::observe;
use stmarl::network::{build_graph, grid_topology, AdjacencyGraph, TopologySpec};
use stmarl::simulator::{ActionMode, FlowSpec, SimConfig, SimState};
use stmarl::training::Policy;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Status codes returned by fallible functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmarlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    SimulationError = 5,
    IoError = 6,
}

/// Copies the most recent error message on this thread into `buf`
/// (truncated, always NUL-terminated). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes (or be null to query the
/// length only).
#[no_mangle]
pub unsafe extern "C" fn stmarl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

pub struct StmarlGraph {
    graph: AdjacencyGraph,
}

pub struct StmarlSim {
    graph: AdjacencyGraph,
    state: SimState,
    flow: FlowSpec,
    plan: FixedTimePlan,
}

pub struct StmarlPolicy {
    policy: Policy,
    hidden: HiddenState,
}

/// Action protocol for `stmarl_sim_decision_step`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmarlActionMode {
    Choose = 0,
    Switch = 1,
}

impl From<StmarlActionMode> for ActionMode {
    fn from(m: StmarlActionMode) -> Self {
        match m {
            StmarlActionMode::Choose => ActionMode::Choose,
            StmarlActionMode::Switch => ActionMode::Switch,
        }
    }
}

/// Controller families a checkpoint can be loaded for.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmarlController {
    Stmarl = 0,
    StmarlSt = 1,
    StmarlT = 2,
    StmarlS = 3,
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, StmarlStatus> {
    if ptr.is_null() {
        set_error("null string pointer");
        return Err(StmarlStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        StmarlStatus::InvalidUtf8
    })
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

/// Builds a grid topology (see the grid generator in the core crate).
/// Returns null on invalid arguments.
#[no_mangle]
pub extern "C" fn stmarl_graph_grid(
    rows: usize,
    cols: usize,
    bidirectional: bool,
    lanes: usize,
    length_m: f64,
    speed_mps: f64,
) -> *mut StmarlGraph {
    if rows == 0 || cols == 0 || lanes == 0 || length_m <= 0.0 || speed_mps <= 0.0 {
        set_error("grid parameters must be positive");
        return std::ptr::null_mut();
    }
    let spec = grid_topology(rows, cols, bidirectional, lanes, length_m, speed_mps);
    match build_graph(&spec) {
        Ok(graph) => Box::into_raw(Box::new(StmarlGraph { graph })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Parses a topology JSON document into a validated graph.
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stmarl_graph_from_json(json: *const c_char) -> *mut StmarlGraph {
    let Ok(text) = cstr(json) else { return std::ptr::null_mut() };
    let spec = match TopologySpec::from_json(text) {
        Ok(s) => s,
        Err(e) => {
            set_error(e.to_string());
            return std::ptr::null_mut();
        }
    };
    match build_graph(&spec) {
        Ok(graph) => Box::into_raw(Box::new(StmarlGraph { graph })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `g` must be a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn stmarl_graph_node_count(g: *const StmarlGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.nodes.len())
}

/// # Safety
/// `g` must be a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn stmarl_graph_edge_count(g: *const StmarlGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.edges.len())
}

/// Number of signalized intersections; the joint-action length.
///
/// # Safety
/// `g` must be a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn stmarl_graph_control_count(g: *const StmarlGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.control_nodes().len())
}

/// # Safety
/// `g` must come from a `stmarl_graph_*` constructor; it is freed.
#[no_mangle]
pub unsafe extern "C" fn stmarl_graph_free(g: *mut StmarlGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

/// Creates a seeded simulator over a copy of `graph` with a flow file
/// body (JSON); pass null for no demand.
///
/// # Safety
/// `graph` must be live; `flow_json` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_new(
    graph: *const StmarlGraph,
    flow_json: *const c_char,
    seed: u64,
) -> *mut StmarlSim {
    let Some(g) = graph.as_ref() else {
        set_error("null graph handle");
        return std::ptr::null_mut();
    };
    let flow = if flow_json.is_null() {
        FlowSpec::none()
    } else {
        let Ok(text) = cstr(flow_json) else { return std::ptr::null_mut() };
        match FlowSpec::from_json(text) {
            Ok(f) => f,
            Err(e) => {
                set_error(e.to_string());
                return std::ptr::null_mut();
            }
        }
    };
    if let Err(e) = flow.validate(&g.graph) {
        set_error(e.to_string());
        return std::ptr::null_mut();
    }
    let state = SimState::new(&g.graph, SimConfig::default(), seed);
    let plan = FixedTimePlan::uniform(&g.graph, 30);
    Box::into_raw(Box::new(StmarlSim { graph: g.graph.clone(), state, flow, plan }))
}

/// Applies a joint action (one entry per control node, ascending node
/// id) and advances one 10-second decision step.
///
/// # Safety
/// `sim` live; `actions` points to `len` entries.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_decision_step(
    sim: *mut StmarlSim,
    actions: *const usize,
    len: usize,
    mode: StmarlActionMode,
) -> StmarlStatus {
    let Some(s) = sim.as_mut() else {
        set_error("null sim handle");
        return StmarlStatus::NullPointer;
    };
    if actions.is_null() {
        set_error("null action pointer");
        return StmarlStatus::NullPointer;
    }
    let joint = std::slice::from_raw_parts(actions, len);
    match s.state.run_decision_step(&s.graph, joint, mode.into(), &s.flow) {
        Ok(_) => StmarlStatus::Ok,
        Err(e) => {
            set_error(e.to_string());
            StmarlStatus::SimulationError
        }
    }
}

/// # Safety
/// `sim` must be a live simulator handle.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_clock(sim: *const StmarlSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.state.clock)
}

/// # Safety
/// `sim` must be a live simulator handle.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_spawned(sim: *const StmarlSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.state.spawned_count)
}

/// # Safety
/// `sim` must be a live simulator handle.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_completed(sim: *const StmarlSim) -> u64 {
    sim.as_ref().map_or(0, |s| s.state.completed_count)
}

/// Mean travel time over all vehicles (in-network vehicles censored at
/// the current clock).
///
/// # Safety
/// `sim` live; `out` points to a double.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_avg_travel_time(
    sim: *const StmarlSim,
    out: *mut f64,
) -> StmarlStatus {
    let Some(s) = sim.as_ref() else {
        set_error("null sim handle");
        return StmarlStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return StmarlStatus::NullPointer;
    }
    match s.state.average_travel_time() {
        Ok(v) => {
            *out = v;
            StmarlStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            StmarlStatus::SimulationError
        }
    }
}

/// Writes `q, n, speed` of one lane into `out[0..3]`.
///
/// # Safety
/// `sim` live; `out` points to three doubles.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_lane_stats(
    sim: *const StmarlSim,
    edge: usize,
    lane: usize,
    out: *mut f64,
) -> StmarlStatus {
    let Some(s) = sim.as_ref() else {
        set_error("null sim handle");
        return StmarlStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return StmarlStatus::NullPointer;
    }
    match s.state.lane_stats(&s.graph, edge) {
        Ok(stats) => match stats.get(lane) {
            Some(st) => {
                *out.add(0) = st.q as f64;
                *out.add(1) = st.n as f64;
                *out.add(2) = st.speed;
                StmarlStatus::Ok
            }
            None => {
                set_error(format!("edge {edge} has no lane {lane}"));
                StmarlStatus::InvalidArgument
            }
        },
        Err(e) => {
            set_error(e.to_string());
            StmarlStatus::SimulationError
        }
    }
}

/// Per-intersection rewards (negative incoming queue totals), one entry
/// per control node.
///
/// # Safety
/// `sim` live; `out` points to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_reward(
    sim: *const StmarlSim,
    out: *mut f64,
    len: usize,
) -> StmarlStatus {
    let Some(s) = sim.as_ref() else {
        set_error("null sim handle");
        return StmarlStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return StmarlStatus::NullPointer;
    }
    let r = stmarl::features::reward(&s.state, &s.graph);
    if r.0.len() != len {
        set_error(format!("reward has {} entries, buffer holds {len}", r.0.len()));
        return StmarlStatus::InvalidArgument;
    }
    std::ptr::copy_nonoverlapping(r.0.as_ptr(), out, len);
    StmarlStatus::Ok
}

/// Greedy max-pressure action for control slot `slot` (choose mode);
/// negative on error.
///
/// # Safety
/// `sim` must be a live simulator handle.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_max_pressure_action(
    sim: *const StmarlSim,
    slot: usize,
) -> c_int {
    let Some(s) = sim.as_ref() else {
        set_error("null sim handle");
        return -1;
    };
    let control = s.graph.control_nodes();
    let Some(&node) = control.get(slot) else {
        set_error(format!("no control slot {slot}"));
        return -1;
    };
    max_pressure_action(&s.state, &s.graph, node) as c_int
}

/// Fixed-time action for control slot `slot` under the uniform 30 s
/// plan; negative on error.
///
/// # Safety
/// `sim` must be a live simulator handle.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_fixed_time_action(
    sim: *const StmarlSim,
    slot: usize,
    mode: StmarlActionMode,
) -> c_int {
    let Some(s) = sim.as_ref() else {
        set_error("null sim handle");
        return -1;
    };
    let control = s.graph.control_nodes();
    let Some(&node) = control.get(slot) else {
        set_error(format!("no control slot {slot}"));
        return -1;
    };
    fixed_time_action(&s.plan, &s.graph, node, s.state.clock, mode.into()) as c_int
}

/// # Safety
/// `sim` must come from `stmarl_sim_new`; it is freed.
#[no_mangle]
pub unsafe extern "C" fn stmarl_sim_free(sim: *mut StmarlSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

/// Loads a trained checkpoint for the given controller family. The
/// returned policy carries its own recurrent state, starting from zero.
///
/// # Safety
/// `graph` live; `checkpoint_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stmarl_policy_load(
    graph: *const StmarlGraph,
    checkpoint_path: *const c_char,
    controller: StmarlController,
    hidden: usize,
    reasoning_steps: usize,
    mode: StmarlActionMode,
) -> *mut StmarlPolicy {
    let Some(g) = graph.as_ref() else {
        set_error("null graph handle");
        return std::ptr::null_mut();
    };
    let Ok(path) = cstr(checkpoint_path) else { return std::ptr::null_mut() };
    let kind = match controller {
        StmarlController::Stmarl => ControllerKind::Stmarl,
        StmarlController::StmarlSt => ControllerKind::StmarlSt,
        StmarlController::StmarlT => ControllerKind::StmarlT,
        StmarlController::StmarlS => ControllerKind::StmarlS,
    };
    if hidden == 0 || reasoning_steps == 0 {
        set_error("hidden and reasoning_steps must be positive");
        return std::ptr::null_mut();
    }
    let cfg = QNetConfig {
        hidden,
        reasoning_steps,
        use_attention: kind != ControllerKind::StmarlS,
        use_lstm: kind != ControllerKind::StmarlT,
        action_mode: mode.into(),
    };
    let mut policy = match kind {
        ControllerKind::StmarlSt => Policy::Independent {
            params: IndepParams::init(&g.graph, &cfg, 0),
            cfg: cfg.clone(),
        },
        _ => Policy::Graph { params: QNetParams::init(&g.graph, &cfg, 0), cfg: cfg.clone() },
    };
    if let Err(e) = policy.store_mut().load_checkpoint_file(Path::new(path)) {
        set_error(e.to_string());
        return std::ptr::null_mut();
    }
    let hidden_state = policy.zero_hidden(&g.graph);
    Box::into_raw(Box::new(StmarlPolicy { policy, hidden: hidden_state }))
}

/// Greedy joint action for the simulator's current observation; the
/// policy's recurrent state advances one step. `actions_out` needs one
/// entry per control node.
///
/// # Safety
/// All handles live; `actions_out` points to `len` entries.
#[no_mangle]
pub unsafe extern "C" fn stmarl_policy_act(
    policy: *mut StmarlPolicy,
    sim: *const StmarlSim,
    actions_out: *mut usize,
    len: usize,
) -> StmarlStatus {
    let Some(p) = policy.as_mut() else {
        set_error("null policy handle");
        return StmarlStatus::NullPointer;
    };
    let Some(s) = sim.as_ref() else {
        set_error("null sim handle");
        return StmarlStatus::NullPointer;
    };
    if actions_out.is_null() {
        set_error("null action buffer");
        return StmarlStatus::NullPointer;
    }
    let obs = observe(&s.state, &s.graph);
    let qs = match p.policy.rollout_q(&s.graph, &obs, &mut p.hidden) {
        Ok(qs) => qs,
        Err(e) => {
            set_error(e.to_string());
            return StmarlStatus::SimulationError;
        }
    };
    if qs.len() != len {
        set_error(format!("joint action has {} entries, buffer holds {len}", qs.len()));
        return StmarlStatus::InvalidArgument;
    }
    for (i, q) in qs.iter().enumerate() {
        *actions_out.add(i) = greedy(q);
    }
    StmarlStatus::Ok
}

/// Resets the policy's recurrent state to zero (start of an episode).
///
/// # Safety
/// `policy` and `graph` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn stmarl_policy_reset(
    policy: *mut StmarlPolicy,
    graph: *const StmarlGraph,
) -> StmarlStatus {
    let Some(p) = policy.as_mut() else {
        set_error("null policy handle");
        return StmarlStatus::NullPointer;
    };
    let Some(g) = graph.as_ref() else {
        set_error("null graph handle");
        return StmarlStatus::NullPointer;
    };
    p.hidden = p.policy.zero_hidden(&g.graph);
    StmarlStatus::Ok
}

/// # Safety
/// `policy` must come from `stmarl_policy_load`; it is freed.
#[no_mangle]
pub unsafe extern "C" fn stmarl_policy_free(policy: *mut StmarlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
