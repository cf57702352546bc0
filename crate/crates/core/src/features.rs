//! Converts simulator state into the per-decision-step observation,
//! the per-intersection reward, and the one-hot tensors the agents
//! consume.
//!
//! Queue and vehicle counts are normalized by lane jam capacity and
//! speeds by free-flow speed so encoder inputs stay O(1); raw queue
//! counts are retained alongside.

use serde::{Deserialize, Serialize};

use crate::network::{AdjacencyGraph, Bearing, NodeKind};
use crate::simulator::SimState;

/// The per-decision-step observation: normalized per-edge lane features
/// `[q.., n.., speed..]` and a per-node phase one-hot (all zero for
/// non-control nodes), padded to the largest phase-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: u64,
    /// Per edge: 3·lane_count features, grouped q, n, speed.
    pub edge_features: Vec<Vec<f64>>,
    /// Raw queue counts per edge per lane.
    pub raw_queues: Vec<Vec<u32>>,
    /// Per node one-hot of the current phase position.
    pub phase_onehot: Vec<Vec<f64>>,
}

/// Reward per control node (ascending node id): negative total queue on
/// the node's incoming lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector(pub Vec<f64>);

impl RewardVector {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Snapshot of the POMDP observation. Pure in the simulator state: the
/// optional sensor noise is a deterministic hash of (seed, clock, edge,
/// lane, feature), so repeated calls without a tick are identical.
pub fn observe(state: &SimState, graph: &AdjacencyGraph) -> Observation {
    let noise_std = state.config.obs_noise_std;
    let mut edge_features = Vec::with_capacity(graph.edges.len());
    let mut raw_queues = Vec::with_capacity(graph.edges.len());
    for edge in &graph.edges {
        let stats = state.lane_stats(graph, edge.id).expect("edge ids are dense");
        let cap = edge.lane_capacity() as f64;
        let lanes = edge.lane_count;
        let mut feats = vec![0.0; 3 * lanes];
        let mut raw = vec![0u32; lanes];
        for (lane, st) in stats.iter().enumerate() {
            let mut q = st.q as f64 / cap;
            let mut n = st.n as f64 / cap;
            let mut speed = st.speed / edge.free_flow_speed;
            if noise_std > 0.0 {
                q += noise_std * unit_normal(state.seed, state.clock, edge.id as u64, lane as u64, 0);
                n += noise_std * unit_normal(state.seed, state.clock, edge.id as u64, lane as u64, 1);
                speed +=
                    noise_std * unit_normal(state.seed, state.clock, edge.id as u64, lane as u64, 2);
            }
            feats[lane] = q;
            feats[lanes + lane] = n;
            feats[2 * lanes + lane] = speed;
            raw[lane] = st.q as u32;
        }
        edge_features.push(feats);
        raw_queues.push(raw);
    }

    let width = graph.max_phase_count();
    let mut phase_onehot = vec![vec![0.0; width]; graph.nodes.len()];
    for signal in state.signals() {
        let node = &graph.nodes[signal.node];
        if node.kind == NodeKind::Control {
            let pos = node
                .phase_set
                .iter()
                .position(|&p| p == signal.current_phase)
                .expect("current phase is in the set");
            phase_onehot[signal.node][pos] = 1.0;
        }
    }

    Observation {
        step: state.clock / state.config.decision_period,
        edge_features,
        raw_queues,
        phase_onehot,
    }
}

/// r_i = −Σ queue length over every incoming lane of intersection i,
/// using raw (unnormalized) queues.
pub fn reward(state: &SimState, graph: &AdjacencyGraph) -> RewardVector {
    let mut out = Vec::new();
    for node in graph.control_nodes() {
        let mut total = 0i64;
        for &e in graph.incoming_edges(node).expect("control node exists") {
            for lane in 0..graph.edges[e].lane_count {
                total += state.queue_len(e, lane) as i64;
            }
        }
        out.push(-(total as f64));
    }
    RewardVector(out)
}

/// Places the 3·l_k feature block of an edge into the slot of its
/// approach bearing: `[e, 0, 0, 0]` for a north approach, etc. The
/// output length is 4·3·l_max for the edge's type.
pub fn direction_one_hot(edge_features: &[f64], bearing: Bearing, l_max_of_type: usize) -> Vec<f64> {
    let block = 3 * l_max_of_type;
    debug_assert!(edge_features.len() <= block, "features exceed the type's block width");
    let mut out = vec![0.0; 4 * block];
    let at = bearing.slot() * block;
    out[at..at + edge_features.len()].copy_from_slice(edge_features);
    out
}

/// Deterministic standard-normal hash noise (Box-Muller over two
/// splitmix64 lanes).
fn unit_normal(seed: u64, clock: u64, edge: u64, lane: u64, feature: u64) -> f64 {
    let key = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(clock)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9)
        .wrapping_add(edge << 24 | lane << 8 | feature);
    let u1 = (splitmix(key) >> 11) as f64 / (1u64 << 53) as f64;
    let u2 = (splitmix(key.wrapping_add(1)) >> 11) as f64 / (1u64 << 53) as f64;
    let u1 = u1.max(f64::MIN_POSITIVE);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
