//! The directional traffic-light adjacency graph: intersections (control
//! nodes), boundary endpoints (non-control nodes), directed roads with
//! lane counts, and the phase/movement tables that define what each
//! signal controls.
//!
//! The graph is immutable after [`build_graph`]; everything downstream
//! (simulator, features, agents) reads it through shared references.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type EdgeId = usize;
pub type PhaseId = usize;

/// Compass direction from which an edge approaches its receiver,
/// derived from sender→receiver geometry (nearest 90° sector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bearing {
    N,
    E,
    S,
    W,
}

impl Bearing {
    pub const ALL: [Bearing; 4] = [Bearing::N, Bearing::E, Bearing::S, Bearing::W];

    /// Slot used for the direction one-hot layout (N, E, S, W).
    pub fn slot(self) -> usize {
        match self {
            Bearing::N => 0,
            Bearing::E => 1,
            Bearing::S => 2,
            Bearing::W => 3,
        }
    }
}

impl fmt::Display for Bearing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Bearing::N => "N",
            Bearing::E => "E",
            Bearing::S => "S",
            Bearing::W => "W",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Control,
    NonControl,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub position: (f64, f64),
    /// Ordered phase ids; empty for non-control nodes.
    pub phase_set: Vec<PhaseId>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: EdgeId,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub lane_count: usize,
    /// Edge type c(k); equal to the lane count by construction.
    pub edge_type: usize,
    pub length: f64,
    pub free_flow_speed: f64,
    pub bearing: Bearing,
}

impl Edge {
    /// Whole seconds a vehicle spends traversing this edge.
    pub fn travel_ticks(&self) -> u64 {
        (self.length / self.free_flow_speed).ceil() as u64
    }

    /// Vehicles one lane can hold (7.5 m of road per queued vehicle).
    pub fn lane_capacity(&self) -> usize {
        ((self.length / 7.5).floor() as usize).max(1)
    }
}

/// One permitted turning movement: vehicles on `in_lane` of `in_edge`
/// may cross to `out_edge`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Movement {
    pub in_edge: EdgeId,
    pub in_lane: usize,
    pub out_edge: EdgeId,
}

#[derive(Debug, Clone)]
pub struct Phase {
    pub id: PhaseId,
    pub movements: Vec<Movement>,
}

/// The validated traffic-light adjacency graph.
#[derive(Debug, Clone)]
pub struct AdjacencyGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    incoming: Vec<Vec<EdgeId>>,
    outgoing: Vec<Vec<EdgeId>>,
    phases: BTreeMap<NodeId, Vec<Phase>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("duplicate edge {0} ({1} -> {2})")]
    DuplicateEdge(EdgeId, NodeId, NodeId),
    #[error("edge {0} references unknown node {1}")]
    DanglingNodeRef(EdgeId, NodeId),
    #[error("node {node}: edges {a} and {b} both approach from {bearing}")]
    BearingCollision { node: NodeId, a: EdgeId, b: EdgeId, bearing: Bearing },
    #[error("node {0}: phase {1} has no movements")]
    EmptyPhase(NodeId, PhaseId),
    #[error("edge {0}: sender equals receiver")]
    SelfLoop(EdgeId),
    #[error("edge {0}: lane count must be >= 1")]
    NoLanes(EdgeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("topology file: {0}")]
    Parse(String),
}

/// Invariant violations reported by [`validate`]; returned, not thrown.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Phase at `node` references a movement whose edges do not meet at
    /// that node.
    CrossNodePhase { node: NodeId, phase: PhaseId },
    BearingCollision { node: NodeId, bearing: Bearing },
    EmptyPhase { node: NodeId, phase: PhaseId },
    ControlWithoutPhases { node: NodeId },
    NonControlWithPhases { node: NodeId },
    IndexInconsistent { edge: EdgeId },
    MovementLaneOutOfRange { node: NodeId, phase: PhaseId },
}

impl AdjacencyGraph {
    /// Edges with receiver `i`, ordered by bearing N, E, S, W.
    pub fn incoming_edges(&self, i: NodeId) -> Result<&[EdgeId], NetworkError> {
        self.incoming.get(i).map(Vec::as_slice).ok_or(NetworkError::UnknownNode(i))
    }

    pub fn outgoing_edges(&self, i: NodeId) -> Result<&[EdgeId], NetworkError> {
        self.outgoing.get(i).map(Vec::as_slice).ok_or(NetworkError::UnknownNode(i))
    }

    pub fn phases(&self, i: NodeId) -> &[Phase] {
        self.phases.get(&i).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn phase(&self, node: NodeId, id: PhaseId) -> Option<&Phase> {
        self.phases(node).iter().find(|p| p.id == id)
    }

    /// Control node ids in ascending order; the joint-action layout.
    pub fn control_nodes(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Control).map(|n| n.id).collect()
    }

    /// Distinct edge types present, ascending.
    pub fn edge_types(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.edges.iter().map(|e| e.edge_type).collect();
        set.into_iter().collect()
    }

    /// Largest phase-set size over all nodes (one-hot width for node
    /// features).
    pub fn max_phase_count(&self) -> usize {
        self.nodes.iter().map(|n| n.phase_set.len()).max().unwrap_or(0)
    }

    /// Outgoing edge of `node` whose direction of travel heads toward
    /// `bearing` (i.e. it approaches its own receiver from the opposite
    /// sector).
    pub fn outgoing_toward(&self, node: NodeId, heading: Bearing) -> Option<EdgeId> {
        let opposite = match heading {
            Bearing::N => Bearing::S,
            Bearing::S => Bearing::N,
            Bearing::E => Bearing::W,
            Bearing::W => Bearing::E,
        };
        self.outgoing[node].iter().copied().find(|&e| self.edges[e].bearing == opposite)
    }
}

// ---------------------------------------------------------------------------
// Topology specification (the on-disk JSON format)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TopologySpec {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    /// Phases keyed by node id (stringly keyed for JSON round-tripping).
    #[serde(default)]
    pub phases: BTreeMap<String, Vec<PhaseSpec>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeSpec {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    pub lanes: usize,
    pub length: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhaseSpec {
    pub id: PhaseId,
    pub movements: Vec<Movement>,
}

impl TopologySpec {
    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn from_file(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NetworkError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

fn bearing_of(sender: &NodeSpec, receiver: &NodeSpec) -> Bearing {
    let dx = receiver.x - sender.x;
    let dy = receiver.y - sender.y;
    if dx.abs() >= dy.abs() {
        if dx >= 0.0 {
            Bearing::W // sender lies west, approach from the west
        } else {
            Bearing::E
        }
    } else if dy >= 0.0 {
        Bearing::S
    } else {
        Bearing::N
    }
}

/// Builds and validates the adjacency graph. Ids are assigned densely in
/// file order; node and edge ids in the spec must be 0..n-1 in order.
pub fn build_graph(spec: &TopologySpec) -> Result<AdjacencyGraph, NetworkError> {
    for (i, n) in spec.nodes.iter().enumerate() {
        if n.id != i {
            return Err(NetworkError::Parse(format!("node ids must be dense 0..: got {}", n.id)));
        }
    }
    for (i, e) in spec.edges.iter().enumerate() {
        if e.id != i {
            return Err(NetworkError::Parse(format!("edge ids must be dense 0..: got {}", e.id)));
        }
    }

    let n = spec.nodes.len();
    let mut edges = Vec::with_capacity(spec.edges.len());
    let mut seen_pairs: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    for e in &spec.edges {
        if e.from >= n {
            return Err(NetworkError::DanglingNodeRef(e.id, e.from));
        }
        if e.to >= n {
            return Err(NetworkError::DanglingNodeRef(e.id, e.to));
        }
        if e.from == e.to {
            return Err(NetworkError::SelfLoop(e.id));
        }
        if e.lanes == 0 {
            return Err(NetworkError::NoLanes(e.id));
        }
        if !seen_pairs.insert((e.from, e.to)) {
            return Err(NetworkError::DuplicateEdge(e.id, e.from, e.to));
        }
        edges.push(Edge {
            id: e.id,
            sender: e.from,
            receiver: e.to,
            lane_count: e.lanes,
            edge_type: e.lanes,
            length: e.length,
            free_flow_speed: e.speed,
            bearing: bearing_of(&spec.nodes[e.from], &spec.nodes[e.to]),
        });
    }

    let mut incoming: Vec<Vec<EdgeId>> = vec![Vec::new(); n];
    let mut outgoing: Vec<Vec<EdgeId>> = vec![Vec::new(); n];
    for e in &edges {
        incoming[e.receiver].push(e.id);
        outgoing[e.sender].push(e.id);
    }
    for list in incoming.iter_mut().chain(outgoing.iter_mut()) {
        list.sort_by_key(|&e| (edges[e].bearing.slot(), e));
    }

    // bearing collisions: two incoming edges in the same sector
    for (node, list) in incoming.iter().enumerate() {
        for pair in list.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if edges[a].bearing == edges[b].bearing {
                return Err(NetworkError::BearingCollision {
                    node,
                    a,
                    b,
                    bearing: edges[a].bearing,
                });
            }
        }
    }

    let mut phases: BTreeMap<NodeId, Vec<Phase>> = BTreeMap::new();
    for (key, list) in &spec.phases {
        let node: NodeId = key
            .parse()
            .map_err(|_| NetworkError::Parse(format!("phase key {key:?} is not a node id")))?;
        if node >= n {
            return Err(NetworkError::UnknownNode(node));
        }
        let mut built = Vec::with_capacity(list.len());
        for p in list {
            if p.movements.is_empty() {
                return Err(NetworkError::EmptyPhase(node, p.id));
            }
            for m in &p.movements {
                if m.in_edge >= edges.len() {
                    return Err(NetworkError::UnknownEdge(m.in_edge));
                }
                if m.out_edge >= edges.len() {
                    return Err(NetworkError::UnknownEdge(m.out_edge));
                }
            }
            built.push(Phase { id: p.id, movements: p.movements.clone() });
        }
        phases.insert(node, built);
    }

    let nodes = spec
        .nodes
        .iter()
        .map(|s| Node {
            id: s.id,
            kind: s.kind,
            position: (s.x, s.y),
            phase_set: phases.get(&s.id).map(|ps| ps.iter().map(|p| p.id).collect()).unwrap_or_default(),
        })
        .collect();

    Ok(AdjacencyGraph { nodes, edges, incoming, outgoing, phases })
}

/// Serializes a graph back to the file format (inverse of `build_graph`
/// up to derived fields).
pub fn to_spec(g: &AdjacencyGraph) -> TopologySpec {
    TopologySpec {
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeSpec { id: n.id, kind: n.kind, x: n.position.0, y: n.position.1 })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| EdgeSpec {
                id: e.id,
                from: e.sender,
                to: e.receiver,
                lanes: e.lane_count,
                length: e.length,
                speed: e.free_flow_speed,
            })
            .collect(),
        phases: g
            .phases
            .iter()
            .map(|(node, ps)| {
                (
                    node.to_string(),
                    ps.iter()
                        .map(|p| PhaseSpec { id: p.id, movements: p.movements.clone() })
                        .collect(),
                )
            })
            .collect(),
    }
}

/// Checks every type invariant, returning all violations found.
pub fn validate(g: &AdjacencyGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    for node in &g.nodes {
        match node.kind {
            NodeKind::Control => {
                if node.phase_set.len() < 2 {
                    out.push(Violation::ControlWithoutPhases { node: node.id });
                }
            }
            NodeKind::NonControl => {
                if !node.phase_set.is_empty() {
                    out.push(Violation::NonControlWithPhases { node: node.id });
                }
            }
        }
        // >4 incoming or repeated bearings
        let mut seen = BTreeMap::new();
        for &e in &g.incoming[node.id] {
            let b = g.edges[e].bearing;
            if seen.insert(b, e).is_some() {
                out.push(Violation::BearingCollision { node: node.id, bearing: b });
            }
        }
        for phase in g.phases(node.id) {
            if phase.movements.is_empty() {
                out.push(Violation::EmptyPhase { node: node.id, phase: phase.id });
            }
            for m in &phase.movements {
                let in_ok = m.in_edge < g.edges.len() && g.edges[m.in_edge].receiver == node.id;
                let out_ok = m.out_edge < g.edges.len() && g.edges[m.out_edge].sender == node.id;
                if !in_ok || !out_ok {
                    out.push(Violation::CrossNodePhase { node: node.id, phase: phase.id });
                    break;
                }
                if m.in_lane >= g.edges[m.in_edge].lane_count {
                    out.push(Violation::MovementLaneOutOfRange { node: node.id, phase: phase.id });
                    break;
                }
            }
        }
    }
    for e in &g.edges {
        if !g.incoming[e.receiver].contains(&e.id) || !g.outgoing[e.sender].contains(&e.id) {
            out.push(Violation::IndexInconsistent { edge: e.id });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Grid topologies
// ---------------------------------------------------------------------------

/// Generates an r×c grid of signalized intersections with a ring of
/// boundary endpoints. Every intersection gets the four-phase set
/// WE-Straight, WE-Left, SN-Straight, SN-Left; phases whose movements do
/// not exist (unidirectional grids) are dropped.
///
/// With `bidirectional` every road segment appears as two opposite
/// edges; otherwise only west-to-east and south-to-north edges are
/// generated.
pub fn grid_topology(
    rows: usize,
    cols: usize,
    bidirectional: bool,
    lanes: usize,
    length: f64,
    speed: f64,
) -> TopologySpec {
    assert!(rows >= 1 && cols >= 1, "grid needs at least one intersection");
    assert!(lanes >= 1, "roads need at least one lane");

    // Node layout: intersections in row-major order, then boundary
    // endpoints (west+east per row, south+north per column).
    let inter = |r: usize, c: usize| -> NodeId { r * cols + c };
    let mut nodes: Vec<NodeSpec> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(NodeSpec {
                id: inter(r, c),
                kind: NodeKind::Control,
                x: (c as f64 + 1.0) * length,
                y: (r as f64 + 1.0) * length,
            });
        }
    }
    let mut west = vec![0; rows];
    let mut east = vec![0; rows];
    let mut south = vec![0; cols];
    let mut north = vec![0; cols];
    for r in 0..rows {
        west[r] = nodes.len();
        nodes.push(NodeSpec {
            id: west[r],
            kind: NodeKind::NonControl,
            x: 0.0,
            y: (r as f64 + 1.0) * length,
        });
        east[r] = nodes.len();
        nodes.push(NodeSpec {
            id: east[r],
            kind: NodeKind::NonControl,
            x: (cols as f64 + 1.0) * length,
            y: (r as f64 + 1.0) * length,
        });
    }
    for c in 0..cols {
        south[c] = nodes.len();
        nodes.push(NodeSpec {
            id: south[c],
            kind: NodeKind::NonControl,
            x: (c as f64 + 1.0) * length,
            y: 0.0,
        });
        north[c] = nodes.len();
        nodes.push(NodeSpec {
            id: north[c],
            kind: NodeKind::NonControl,
            x: (c as f64 + 1.0) * length,
            y: (rows as f64 + 1.0) * length,
        });
    }

    let mut edges: Vec<EdgeSpec> = Vec::new();
    let mut push_edge = |from: NodeId, to: NodeId| {
        let id = edges.len();
        edges.push(EdgeSpec { id, from, to, lanes, length, speed });
    };
    // horizontal segments west→east, then optionally the reverse
    for r in 0..rows {
        let mut chain = vec![west[r]];
        chain.extend((0..cols).map(|c| inter(r, c)));
        chain.push(east[r]);
        for w in chain.windows(2) {
            push_edge(w[0], w[1]);
            if bidirectional {
                push_edge(w[1], w[0]);
            }
        }
    }
    // vertical segments south→north
    for c in 0..cols {
        let mut chain = vec![south[c]];
        chain.extend((0..rows).map(|r| inter(r, c)));
        chain.push(north[c]);
        for w in chain.windows(2) {
            push_edge(w[0], w[1]);
            if bidirectional {
                push_edge(w[1], w[0]);
            }
        }
    }

    // movement tables per intersection
    let by_pair: BTreeMap<(NodeId, NodeId), EdgeId> =
        edges.iter().map(|e| ((e.from, e.to), e.id)).collect();
    let node_pos: BTreeMap<NodeId, (f64, f64)> =
        nodes.iter().map(|n| (n.id, (n.x, n.y))).collect();
    // incoming edge at `node` from compass sector, by geometry
    let incoming_from = |node: NodeId, b: Bearing| -> Option<EdgeId> {
        edges
            .iter()
            .find(|e| {
                e.to == node && {
                    let (sx, sy) = node_pos[&e.from];
                    let (nx, ny) = node_pos[&node];
                    let spec_sender = NodeSpec { id: e.from, kind: NodeKind::Control, x: sx, y: sy };
                    let spec_recv = NodeSpec { id: node, kind: NodeKind::Control, x: nx, y: ny };
                    bearing_of(&spec_sender, &spec_recv) == b
                }
            })
            .map(|e| e.id)
    };
    let neighbor_toward = |node: NodeId, b: Bearing| -> Option<NodeId> {
        let (x, y) = node_pos[&node];
        let want = match b {
            Bearing::E => (x + length, y),
            Bearing::W => (x - length, y),
            Bearing::N => (x, y + length),
            Bearing::S => (x, y - length),
        };
        nodes
            .iter()
            .find(|n| (n.x - want.0).abs() < 1e-6 && (n.y - want.1).abs() < 1e-6)
            .map(|n| n.id)
    };
    let out_toward = |node: NodeId, b: Bearing| -> Option<EdgeId> {
        neighbor_toward(node, b).and_then(|t| by_pair.get(&(node, t)).copied())
    };

    // Lane roles for an approach with L lanes: lane 0 turns left, the last
    // lane goes straight and turns right, middle lanes go straight.
    let straight_lanes = |l: usize| -> Vec<usize> {
        if l == 1 {
            vec![0]
        } else {
            (1..l).collect()
        }
    };
    let left_lane = 0usize;
    let right_lane = |l: usize| l - 1;

    let mut phases: BTreeMap<String, Vec<PhaseSpec>> = BTreeMap::new();
    for r in 0..rows {
        for c in 0..cols {
            let node = inter(r, c);
            // (approach bearing, heading): vehicles approaching from W head E
            let headings = |approach: Bearing| -> (Bearing, Bearing, Bearing) {
                match approach {
                    Bearing::W => (Bearing::E, Bearing::N, Bearing::S), // straight, left, right
                    Bearing::E => (Bearing::W, Bearing::S, Bearing::N),
                    Bearing::S => (Bearing::N, Bearing::W, Bearing::E),
                    Bearing::N => (Bearing::S, Bearing::E, Bearing::W),
                }
            };
            let build_phase = |approaches: [Bearing; 2], straight: bool| -> Vec<Movement> {
                let mut movements = Vec::new();
                for ap in approaches {
                    let Some(in_edge) = incoming_from(node, ap) else { continue };
                    let l = edges[in_edge].lanes;
                    let (fwd, left, right) = headings(ap);
                    if straight {
                        if let Some(out) = out_toward(node, fwd) {
                            for lane in straight_lanes(l) {
                                movements.push(Movement { in_edge, in_lane: lane, out_edge: out });
                            }
                        }
                        if let Some(out) = out_toward(node, right) {
                            movements.push(Movement {
                                in_edge,
                                in_lane: right_lane(l),
                                out_edge: out,
                            });
                        }
                    } else if let Some(out) = out_toward(node, left) {
                        movements.push(Movement { in_edge, in_lane: left_lane, out_edge: out });
                    }
                }
                movements
            };
            let candidates = [
                build_phase([Bearing::W, Bearing::E], true),  // WE-Straight
                build_phase([Bearing::W, Bearing::E], false), // WE-Left
                build_phase([Bearing::S, Bearing::N], true),  // SN-Straight
                build_phase([Bearing::S, Bearing::N], false), // SN-Left
            ];
            let list: Vec<PhaseSpec> = candidates
                .into_iter()
                .filter(|m| !m.is_empty())
                .enumerate()
                .map(|(id, movements)| PhaseSpec { id, movements })
                .collect();
            phases.insert(node.to_string(), list);
        }
    }

    TopologySpec { nodes, edges, phases }
}

/// All boundary-to-boundary straight crossing routes of a grid topology
/// (west→east, south→north, and the reverses when they exist). These are
/// the route sets the synthetic Bernoulli flows draw from.
pub fn grid_crossing_routes(g: &AdjacencyGraph) -> Vec<Vec<EdgeId>> {
    let mut routes = Vec::new();
    for node in &g.nodes {
        if node.kind != NodeKind::NonControl {
            continue;
        }
        for &first in g.outgoing_edges(node.id).expect("node exists") {
            // follow straight until hitting a non-control node
            let mut route = vec![first];
            let mut cur = g.edges[first].receiver;
            let heading = g.edges[first].bearing; // approach sector stays constant going straight
            while g.nodes[cur].kind == NodeKind::Control {
                let next = g.outgoing_edges(cur).expect("node exists").iter().copied().find(|&e| {
                    g.edges[e].bearing == heading
                });
                match next {
                    Some(e) => {
                        route.push(e);
                        cur = g.edges[e].receiver;
                    }
                    None => break,
                }
            }
            if g.nodes[cur].kind == NodeKind::NonControl {
                routes.push(route);
            }
        }
    }
    routes
}
