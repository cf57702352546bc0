//! Non-learning baselines: fixed-time cyclic plans and greedy
//! max-pressure control.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{AdjacencyGraph, NodeId, PhaseId};
use crate::simulator::{ActionMode, SimState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("plan file: {0}")]
    Parse(String),
    #[error("node {node}: phase duration {duration} must be a positive multiple of 10")]
    BadDuration { node: NodeId, duration: u64 },
    #[error("node {0} has no plan entry")]
    MissingNode(NodeId),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlanEntry {
    pub phase: PhaseId,
    pub duration: u64,
}

/// Pre-defined cyclic green schedule per node. Durations are in seconds,
/// each at least one decision period (10 s) and a multiple of it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FixedTimePlan(pub BTreeMap<String, Vec<PlanEntry>>);

impl FixedTimePlan {
    /// The default plan: every phase of every control node in order,
    /// `green` seconds each.
    pub fn uniform(graph: &AdjacencyGraph, green: u64) -> Self {
        let mut map = BTreeMap::new();
        for node in graph.control_nodes() {
            let entries = graph
                .phases(node)
                .iter()
                .map(|p| PlanEntry { phase: p.id, duration: green })
                .collect();
            map.insert(node.to_string(), entries);
        }
        FixedTimePlan(map)
    }

    pub fn from_json(text: &str) -> Result<Self, ControllerError> {
        serde_json::from_str(text).map_err(|e| ControllerError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_file(path: &Path) -> Result<Self, ControllerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ControllerError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self, graph: &AdjacencyGraph) -> Result<(), ControllerError> {
        for node in graph.control_nodes() {
            let entries = self
                .0
                .get(&node.to_string())
                .ok_or(ControllerError::MissingNode(node))?;
            for e in entries {
                if e.duration == 0 || e.duration % 10 != 0 {
                    return Err(ControllerError::BadDuration { node, duration: e.duration });
                }
            }
        }
        Ok(())
    }

    fn entries(&self, node: NodeId) -> &[PlanEntry] {
        self.0.get(&node.to_string()).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Index into the plan's entry list scheduled at `clock`.
    fn scheduled_slot(&self, node: NodeId, clock: u64) -> usize {
        let entries = self.entries(node);
        let cycle: u64 = entries.iter().map(|e| e.duration).sum();
        let mut t = clock % cycle;
        for (i, e) in entries.iter().enumerate() {
            if t < e.duration {
                return i;
            }
            t -= e.duration;
        }
        entries.len() - 1
    }
}

/// The fixed-time action at a decision boundary. In choose mode this is
/// the scheduled phase-set index; in switch mode it is 1 exactly when
/// the current phase's green budget has elapsed.
pub fn fixed_time_action(
    plan: &FixedTimePlan,
    graph: &AdjacencyGraph,
    node: NodeId,
    clock: u64,
    mode: ActionMode,
) -> usize {
    let slot = plan.scheduled_slot(node, clock);
    match mode {
        ActionMode::Choose => {
            let phase = plan.entries(node)[slot].phase;
            graph.nodes[node]
                .phase_set
                .iter()
                .position(|&p| p == phase)
                .expect("plan phases exist in the phase set")
        }
        ActionMode::Switch => {
            if clock == 0 {
                return 0;
            }
            let prev = plan.scheduled_slot(node, clock - 10);
            usize::from(slot != prev)
        }
    }
}

/// Pressure of one phase: for each movement, upstream queue minus the
/// mean queue over the movement's out-edge lanes. The downstream side
/// uses the mean because the target lane is only chosen on arrival.
pub fn phase_pressure(
    state: &SimState,
    graph: &AdjacencyGraph,
    node: NodeId,
    phase: PhaseId,
) -> f64 {
    let Some(phase) = graph.phase(node, phase) else { return 0.0 };
    let mut pressure = 0.0;
    for m in &phase.movements {
        let upstream = state.queue_len(m.in_edge, m.in_lane) as f64;
        let out = &graph.edges[m.out_edge];
        let downstream: f64 = (0..out.lane_count)
            .map(|l| state.queue_len(m.out_edge, l) as f64)
            .sum::<f64>()
            / out.lane_count as f64;
        pressure += upstream - downstream;
    }
    pressure
}

/// Greedy max-pressure control: the phase-set index with the maximum
/// pressure, ties toward the lowest phase id. Runs in choose mode at the
/// regular decision cadence.
pub fn max_pressure_action(state: &SimState, graph: &AdjacencyGraph, node: NodeId) -> usize {
    let phases = graph.phases(node);
    let mut best = 0;
    let mut best_pressure = f64::NEG_INFINITY;
    for (i, p) in phases.iter().enumerate() {
        let pressure = phase_pressure(state, graph, node, p.id);
        if pressure > best_pressure {
            best = i;
            best_pressure = pressure;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_graph, grid_topology, Movement, NodeKind};
    use crate::network::{EdgeSpec, NodeSpec, PhaseSpec, TopologySpec};
    use crate::simulator::{FlowSpec, SimConfig, TimedDepart};

    fn grid() -> AdjacencyGraph {
        build_graph(&grid_topology(2, 2, true, 3, 300.0, 11.11)).unwrap()
    }

    #[test]
    fn fixed_time_schedule_arithmetic() {
        let graph = grid();
        let plan = FixedTimePlan::uniform(&graph, 30);
        plan.validate(&graph).unwrap();
        // 4 phases × 30 s: phase index = floor(clock/30) mod 4
        for clock in (0..360).step_by(10) {
            let want = ((clock / 30) % 4) as usize;
            assert_eq!(
                fixed_time_action(&plan, &graph, 0, clock, ActionMode::Choose),
                want,
                "clock {clock}"
            );
        }
        // clock 0 → first phase, keep
        assert_eq!(fixed_time_action(&plan, &graph, 0, 0, ActionMode::Choose), 0);
        assert_eq!(fixed_time_action(&plan, &graph, 0, 0, ActionMode::Switch), 0);
    }

    #[test]
    fn fixed_time_switch_fires_on_budget_boundaries() {
        let graph = grid();
        let plan = FixedTimePlan::uniform(&graph, 30);
        let mut switches = Vec::new();
        for clock in (0..120).step_by(10) {
            if fixed_time_action(&plan, &graph, 0, clock, ActionMode::Switch) == 1 {
                switches.push(clock);
            }
        }
        assert_eq!(switches, vec![30, 60, 90]);
    }

    #[test]
    fn one_cycle_visits_every_phase_once() {
        let graph = grid();
        let plan = FixedTimePlan::uniform(&graph, 30);
        let mut seen = Vec::new();
        for clock in (0..120).step_by(10) {
            let a = fixed_time_action(&plan, &graph, 0, clock, ActionMode::Choose);
            if seen.last() != Some(&a) {
                seen.push(a);
            }
        }
        assert_eq!(seen, vec![0, 1, 2, 3]);
        // periodic with period = Σ durations
        for clock in (0..240).step_by(10) {
            assert_eq!(
                fixed_time_action(&plan, &graph, 0, clock, ActionMode::Choose),
                fixed_time_action(&plan, &graph, 0, clock + 120, ActionMode::Choose)
            );
        }
    }

    #[test]
    fn plan_validation_rejects_bad_durations() {
        let graph = grid();
        let mut plan = FixedTimePlan::uniform(&graph, 30);
        plan.0.get_mut("0").unwrap()[0].duration = 15;
        assert!(matches!(
            plan.validate(&graph),
            Err(ControllerError::BadDuration { node: 0, duration: 15 })
        ));
    }

    /// Two-phase intersection with hand-set queues for pressure checks.
    fn pressure_fixture() -> (AdjacencyGraph, SimState) {
        // four endpoints around one control node; phase 0 serves W→E,
        // phase 1 serves S→N
        let mut phases = std::collections::BTreeMap::new();
        phases.insert(
            "0".to_string(),
            vec![
                PhaseSpec { id: 0, movements: vec![Movement { in_edge: 0, in_lane: 0, out_edge: 2 }] },
                PhaseSpec { id: 1, movements: vec![Movement { in_edge: 1, in_lane: 0, out_edge: 3 }] },
            ],
        );
        let spec = TopologySpec {
            nodes: vec![
                NodeSpec { id: 0, kind: NodeKind::Control, x: 0.0, y: 0.0 },
                NodeSpec { id: 1, kind: NodeKind::NonControl, x: -300.0, y: 0.0 },
                NodeSpec { id: 2, kind: NodeKind::NonControl, x: 0.0, y: -300.0 },
                NodeSpec { id: 3, kind: NodeKind::NonControl, x: 300.0, y: 0.0 },
                NodeSpec { id: 4, kind: NodeKind::NonControl, x: 0.0, y: 300.0 },
            ],
            edges: vec![
                EdgeSpec { id: 0, from: 1, to: 0, lanes: 1, length: 300.0, speed: 10.0 },
                EdgeSpec { id: 1, from: 2, to: 0, lanes: 1, length: 300.0, speed: 10.0 },
                EdgeSpec { id: 2, from: 0, to: 3, lanes: 1, length: 300.0, speed: 10.0 },
                EdgeSpec { id: 3, from: 0, to: 4, lanes: 1, length: 300.0, speed: 10.0 },
            ],
            phases,
        };
        let graph = build_graph(&spec).unwrap();
        let state = SimState::new(&graph, SimConfig::default(), 0);
        (graph, state)
    }

    /// Feeds timed vehicles while flipping the signal every other tick,
    /// so constant yellow keeps every approach fully queued.
    fn queue_vehicles(state: &mut SimState, graph: &AdjacencyGraph, departs: Vec<(usize, usize)>) {
        let base = state.clock;
        let count = departs.len() as u64;
        let flow = FlowSpec::Vehicles(
            departs
                .into_iter()
                .enumerate()
                .map(|(i, (edge, next))| TimedDepart {
                    depart: base + i as u64,
                    route: vec![edge, next],
                })
                .collect(),
        );
        for _ in 0..(35 + count) {
            let flip = 1 - state.signals()[0].phase_cursor % 2;
            state.apply_action(graph, &[flip], ActionMode::Choose).unwrap();
            state.spawn(graph, &flow).unwrap();
            state.tick(graph);
        }
    }

    #[test]
    fn empty_network_pressure_ties_to_phase_zero() {
        let (graph, state) = pressure_fixture();
        assert_eq!(max_pressure_action(&state, &graph, 0), 0);
        assert_eq!(phase_pressure(&state, &graph, 0, 0), 0.0);
        assert_eq!(phase_pressure(&state, &graph, 0, 1), 0.0);
    }

    #[test]
    fn hand_built_queues_pick_the_heavier_phase() {
        let (graph, mut state) = pressure_fixture();
        // 5 on the west approach (phase 0), 3 on the south (phase 1)
        let mut departs = vec![(0, 2); 5];
        departs.extend(vec![(1, 3); 3]);
        queue_vehicles(&mut state, &graph, departs);
        assert_eq!(state.queue_len(0, 0), 5);
        assert_eq!(state.queue_len(1, 0), 3);
        assert_eq!(phase_pressure(&state, &graph, 0, 0), 5.0);
        assert_eq!(phase_pressure(&state, &graph, 0, 1), 3.0);
        assert_eq!(max_pressure_action(&state, &graph, 0), 0);
        // pressure is a function of queue counts only: adding one more
        // vehicle to the in-lane of phase 1 never decreases its pressure
        queue_vehicles(&mut state, &graph, vec![(1, 3)]);
        assert!(phase_pressure(&state, &graph, 0, 1) >= 3.0);
    }

    #[test]
    fn saturated_downstream_cancels_pressure() {
        // two signalized nodes in a row, both held red for the main
        // direction: equal queues upstream and downstream of node 1's
        // straight movement cancel its pressure exactly
        let mut phases = std::collections::BTreeMap::new();
        phases.insert(
            "1".to_string(),
            vec![
                PhaseSpec { id: 0, movements: vec![Movement { in_edge: 0, in_lane: 0, out_edge: 1 }] },
                PhaseSpec { id: 1, movements: vec![Movement { in_edge: 3, in_lane: 0, out_edge: 1 }] },
            ],
        );
        phases.insert(
            "2".to_string(),
            vec![
                PhaseSpec { id: 0, movements: vec![Movement { in_edge: 1, in_lane: 0, out_edge: 2 }] },
                PhaseSpec { id: 1, movements: vec![Movement { in_edge: 4, in_lane: 0, out_edge: 2 }] },
            ],
        );
        let spec = TopologySpec {
            nodes: vec![
                NodeSpec { id: 0, kind: NodeKind::NonControl, x: 0.0, y: 0.0 },
                NodeSpec { id: 1, kind: NodeKind::Control, x: 300.0, y: 0.0 },
                NodeSpec { id: 2, kind: NodeKind::Control, x: 600.0, y: 0.0 },
                NodeSpec { id: 3, kind: NodeKind::NonControl, x: 900.0, y: 0.0 },
                NodeSpec { id: 4, kind: NodeKind::NonControl, x: 300.0, y: -300.0 },
                NodeSpec { id: 5, kind: NodeKind::NonControl, x: 600.0, y: -300.0 },
            ],
            edges: vec![
                EdgeSpec { id: 0, from: 0, to: 1, lanes: 1, length: 300.0, speed: 10.0 },
                EdgeSpec { id: 1, from: 1, to: 2, lanes: 1, length: 300.0, speed: 10.0 },
                EdgeSpec { id: 2, from: 2, to: 3, lanes: 1, length: 300.0, speed: 10.0 },
                EdgeSpec { id: 3, from: 4, to: 1, lanes: 1, length: 300.0, speed: 10.0 },
                EdgeSpec { id: 4, from: 5, to: 2, lanes: 1, length: 300.0, speed: 10.0 },
            ],
            phases,
        };
        let graph = build_graph(&spec).unwrap();
        let mut state = SimState::new(&graph, SimConfig::default(), 0);
        // hold both nodes on their side phases (red for the main line)
        state.apply_action(&graph, &[1, 1], ActionMode::Choose).unwrap();
        let k = 3;
        let flow = FlowSpec::Vehicles(
            (0..k)
                .map(|i| TimedDepart { depart: i, route: vec![0, 1, 2] })
                .chain((0..k).map(|i| TimedDepart { depart: i, route: vec![1, 2] }))
                .collect(),
        );
        for _ in 0..40 {
            state.spawn(&graph, &flow).unwrap();
            state.tick(&graph);
        }
        assert_eq!(state.queue_len(0, 0), k as usize);
        assert_eq!(state.queue_len(1, 0), k as usize);
        assert_eq!(phase_pressure(&state, &graph, 1, 0), 0.0);
    }
}
