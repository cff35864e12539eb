//! Brute-force property checks over recorded traces.
//!
//! Nothing here reads a node's routing table or calls into the engine's
//! argument search: source reachability is recomputed from the topology
//! (as replayed from the trace) with a private transitive closure.

mod exhaustive;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Topology;
use crate::ids::NodeId;
use crate::transport::{EventKind, TopologyRecord, Trace, TraceEvent, UpdateRecord};
use crate::value::PropagationValue;

pub use exhaustive::{explore_interleavings, ExhaustiveConfig, ExhaustiveReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("the run did not quiesce; consistency is only defined at quiescence")]
    NotQuiescent,
}

/// Outcome of one check. A failed verdict carries the smallest set of trace
/// events exhibiting the violation, plus a readable explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witness: Vec<TraceEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Verdict {
    fn pass(property: &str) -> Verdict {
        Verdict { property: property.into(), holds: true, witness: Vec::new(), detail: None }
    }

    fn fail(property: &str, witness: Vec<TraceEvent>, detail: String) -> Verdict {
        Verdict { property: property.into(), holds: false, witness, detail: Some(detail) }
    }
}

pub const GLITCH_FREEDOM: &str = "glitch_freedom";
pub const MONOTONICITY: &str = "monotonicity";
pub const CONSISTENCY: &str = "consistency";
pub const EXPLORATION: &str = "exploration";

/// Adjacency plus transitive closure, rebuilt whenever the graph changes.
#[derive(Debug, Clone, Default)]
pub struct Reachability {
    succs: BTreeMap<NodeId, BTreeSet<NodeId>>,
    below: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Reachability {
    pub fn new(topology: &Topology) -> Reachability {
        Reachability::from_edges(topology.nodes().iter().cloned(), topology.edges())
    }

    pub fn from_edges(nodes: impl IntoIterator<Item = NodeId>, edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Reachability {
        let mut r = Reachability::default();
        for n in nodes {
            r.succs.entry(n).or_default();
        }
        for (a, b) in edges {
            r.succs.entry(b.clone()).or_default();
            r.succs.entry(a).or_default().insert(b);
        }
        r.close();
        r
    }

    fn close(&mut self) {
        self.below.clear();
        for start in self.succs.keys() {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<&NodeId> = self.succs[start].iter().collect();
            while let Some(n) = stack.pop() {
                if seen.insert(n.clone()) {
                    if let Some(next) = self.succs.get(n) {
                        stack.extend(next.iter());
                    }
                }
            }
            self.below.insert(start.clone(), seen);
        }
    }

    /// `s == n` or a path `s ->* n` exists.
    pub fn feeds(&self, s: &NodeId, n: &NodeId) -> bool {
        s == n || self.below.get(s).is_some_and(|b| b.contains(n))
    }

    pub fn contains(&self, n: &NodeId) -> bool {
        self.succs.contains_key(n)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.succs.keys()
    }

    pub fn preds(&self, n: &NodeId) -> BTreeSet<NodeId> {
        self.succs.iter().filter(|(_, s)| s.contains(n)).map(|(p, _)| p.clone()).collect()
    }

    pub fn sources(&self) -> Vec<NodeId> {
        let targets: BTreeSet<&NodeId> = self.succs.values().flatten().collect();
        self.succs.keys().filter(|n| !targets.contains(n)).cloned().collect()
    }

    pub fn sinks(&self) -> Vec<NodeId> {
        self.succs.iter().filter(|(_, s)| s.is_empty()).map(|(n, _)| n.clone()).collect()
    }

    pub fn descendants(&self, n: &NodeId) -> BTreeSet<NodeId> {
        self.below.get(n).cloned().unwrap_or_default()
    }

    /// Applies a topology record. Returns whether the graph changed.
    pub fn apply(&mut self, record: &TopologyRecord) -> Result<bool, OracleError> {
        let unknown = |n: &NodeId| OracleError::MalformedTrace(format!("topology record names unknown node {n}"));
        match record {
            TopologyRecord::Initial { nodes, edges } => {
                *self = Reachability::from_edges(nodes.iter().cloned(), edges.iter().cloned());
            }
            TopologyRecord::EdgeAdded { from, to } => {
                if !self.contains(to) {
                    return Err(unknown(to));
                }
                self.succs.get_mut(from).ok_or_else(|| unknown(from))?.insert(to.clone());
                self.close();
            }
            TopologyRecord::EdgeRemoved { from, to } => {
                self.succs.get_mut(from).ok_or_else(|| unknown(from))?.remove(to);
                self.close();
            }
            TopologyRecord::NodeAdded { node } => {
                self.succs.entry(node.clone()).or_default();
                self.close();
            }
            TopologyRecord::NodeRemoved { node } => {
                self.succs.remove(node).ok_or_else(|| unknown(node))?;
                for s in self.succs.values_mut() {
                    s.remove(node);
                }
                self.close();
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn is_structural(record: &TopologyRecord) -> bool {
    matches!(
        record,
        TopologyRecord::EdgeAdded { .. }
            | TopologyRecord::EdgeRemoved { .. }
            | TopologyRecord::NodeAdded { .. }
            | TopologyRecord::NodeRemoved { .. }
    )
}

/// Whether the trace changes the topology after the initial record.
pub fn is_dynamic(trace: &Trace) -> bool {
    trace.iter().any(|e| matches!(&e.kind, EventKind::TopologyOp(r) if is_structural(r)))
}

fn check_sequence(trace: &Trace) -> Result<(), OracleError> {
    for pair in trace.events.windows(2) {
        if pair[1].seq <= pair[0].seq {
            return Err(OracleError::MalformedTrace(format!("sequence number {} follows {}", pair[1].seq, pair[0].seq)));
        }
        if pair[1].time < pair[0].time {
            return Err(OracleError::MalformedTrace(format!("time goes backwards at seq {}", pair[1].seq)));
        }
    }
    Ok(())
}

/// Incremental glitch detector; feed it events in trace order.
#[derive(Debug, Clone)]
pub struct GlitchChecker {
    reach: Reachability,
    /// Missing clocks are violations too (no topology changes in the run).
    strict: bool,
}

impl GlitchChecker {
    pub fn new(initial: &Topology, strict: bool) -> GlitchChecker {
        GlitchChecker { reach: Reachability::new(initial), strict }
    }

    /// Returns a description of the glitch if `event` is a glitching update.
    pub fn observe(&mut self, event: &TraceEvent) -> Result<Option<String>, OracleError> {
        match &event.kind {
            EventKind::TopologyOp(record) => {
                self.reach.apply(record)?;
                Ok(None)
            }
            EventKind::Update(u) => Ok(self.glitch_in(u)),
            _ => Ok(None),
        }
    }

    fn glitch_in(&self, u: &UpdateRecord) -> Option<String> {
        let sources = self.reach.sources();
        for (i, a) in u.args.iter().enumerate() {
            for b in &u.args[i + 1..] {
                for s in &sources {
                    if !(self.reach.feeds(s, &a.from) && self.reach.feeds(s, &b.from)) {
                        continue;
                    }
                    match (a.clock_of(s), b.clock_of(s)) {
                        (Some(x), Some(y)) if x != y => {
                            return Some(format!("{s} reaches {} and {}; arguments carry clocks {x} and {y}", a.from, b.from));
                        }
                        (None, _) | (_, None) if self.strict => {
                            return Some(format!("{s} reaches {} and {}; an argument carries no clock for it", a.from, b.from));
                        }
                        _ => {}
                    }
                }
            }
        }
        None
    }
}

/// No update combines arguments that reflect different versions of a source
/// reaching both of their senders. `initial` is used until the trace's own
/// initial topology record, if any.
pub fn check_glitch_freedom(trace: &Trace, initial: &Topology) -> Result<Verdict, OracleError> {
    check_sequence(trace)?;
    let mut checker = GlitchChecker::new(initial, !is_dynamic(trace));
    for event in trace.iter() {
        if let Some(why) = checker.observe(event)? {
            return Ok(Verdict::fail(GLITCH_FREEDOM, vec![event.clone()], format!("update at {}: {why}", event.node)));
        }
    }
    Ok(Verdict::pass(GLITCH_FREEDOM))
}

/// Incremental monotonicity tracker: last clock of `s` used from `pred` at `node`.
#[derive(Debug, Clone, Default, Hash, PartialEq, Eq)]
pub struct MonotonicityChecker {
    last: BTreeMap<(NodeId, NodeId, NodeId), (u64, u64)>,
}

impl MonotonicityChecker {
    /// On violation returns the seq of the earlier update and a description.
    pub fn observe(&mut self, event: &TraceEvent) -> Option<(u64, String)> {
        let EventKind::Update(u) = &event.kind else { return None };
        for arg in &u.args {
            for (s, c) in &arg.sclocks {
                let key = (event.node.clone(), arg.from.clone(), s.clone());
                if let Some(&(prev, seq)) = self.last.get(&key) {
                    if *c < prev {
                        let why = format!(
                            "{} used {s}={prev} from {} and later {s}={c}",
                            event.node, arg.from
                        );
                        return Some((seq, why));
                    }
                }
                self.last.insert(key, (*c, event.seq));
            }
        }
        None
    }
}

/// Per node, per predecessor and per source, the clocks used by successive
/// updates never decrease.
pub fn check_monotonicity(trace: &Trace) -> Result<Verdict, OracleError> {
    check_sequence(trace)?;
    let mut checker = MonotonicityChecker::default();
    for event in trace.iter() {
        if let Some((earlier, why)) = checker.observe(event) {
            let first = trace.iter().find(|e| e.seq == earlier).cloned();
            let witness = first.into_iter().chain(std::iter::once(event.clone())).collect();
            return Ok(Verdict::fail(MONOTONICITY, witness, why));
        }
    }
    Ok(Verdict::pass(MONOTONICITY))
}

/// Every node on a source's propagation path reflects that source's final
/// clock. A clock missing from a node's last value counts as 0.
///
/// On a trace that changes the topology, only sources that emitted after the
/// last topology event are checked: a node that gains a path to a source
/// after that source went quiet has nothing newer to reflect.
pub fn check_consistency(
    final_values: &BTreeMap<NodeId, PropagationValue>,
    source_clocks: &BTreeMap<NodeId, u64>,
    topology: &Topology,
    quiescent: bool,
    trace: Option<&Trace>,
) -> Result<Verdict, OracleError> {
    if !quiescent {
        return Err(OracleError::NotQuiescent);
    }
    let reach = Reachability::new(topology);
    let settled = trace.filter(|t| is_dynamic(t)).map(|t| {
        let cut = t
            .iter()
            .filter(|e| matches!(&e.kind, EventKind::TopologyOp(r) if !matches!(r, TopologyRecord::Initial { .. })))
            .map(|e| e.seq)
            .max()
            .unwrap_or(0);
        t.iter()
            .filter(|e| e.seq > cut && matches!(e.kind, EventKind::SourceEmit { .. }))
            .map(|e| e.node.clone())
            .collect::<BTreeSet<NodeId>>()
    });
    for s in reach.sources() {
        if settled.as_ref().is_some_and(|emitted| !emitted.contains(&s)) {
            continue;
        }
        let want = source_clocks.get(&s).copied().unwrap_or(0);
        for n in reach.descendants(&s) {
            let have = final_values.get(&n).and_then(|v| v.clock_of(&s)).unwrap_or(0);
            if have != want {
                let witness = trace.map(|t| consistency_witness(t, &s, &n)).unwrap_or_default();
                return Ok(Verdict::fail(
                    CONSISTENCY,
                    witness,
                    format!("{n} reflects {s}={have}, but {s} last emitted clock {want}"),
                ));
            }
        }
    }
    Ok(Verdict::pass(CONSISTENCY))
}

/// The last emission of `s` and the last update of `n`.
fn consistency_witness(trace: &Trace, s: &NodeId, n: &NodeId) -> Vec<TraceEvent> {
    let emit = trace.events.iter().rev().find(|e| &e.node == s && matches!(e.kind, EventKind::SourceEmit { .. }));
    let update = trace.events.iter().rev().find(|e| &e.node == n && matches!(e.kind, EventKind::Update(_)));
    let mut w: Vec<TraceEvent> = emit.into_iter().chain(update).cloned().collect();
    w.sort_by_key(|e| e.seq);
    w
}

/// Every node's table maps each source to exactly the direct predecessors
/// that are, or are reached from, that source.
pub fn check_exploration(topology: &Topology, tables: &BTreeMap<NodeId, BTreeMap<NodeId, BTreeSet<NodeId>>>) -> Verdict {
    let reach = Reachability::new(topology);
    let sources = reach.sources();
    for n in reach.nodes() {
        let mut want: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for p in reach.preds(n) {
            for s in &sources {
                if reach.feeds(s, &p) {
                    want.entry(s.clone()).or_default().insert(p.clone());
                }
            }
        }
        let empty = BTreeMap::new();
        let have = tables.get(n).unwrap_or(&empty);
        if *have != want {
            return Verdict::fail(EXPLORATION, Vec::new(), format!("{n}: table {} differs from {}", fmt_table(have), fmt_table(&want)));
        }
    }
    Verdict::pass(EXPLORATION)
}

fn fmt_table(t: &BTreeMap<NodeId, BTreeSet<NodeId>>) -> String {
    let entries: Vec<String> = t
        .iter()
        .map(|(s, ps)| format!("{s}:{{{}}}", ps.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(",")))
        .collect();
    format!("{{{}}}", entries.join(", "))
}

/// Generated load minus processed load: the sum over emissions of the number
/// of sinks reachable from the emitting source, minus the number of sink
/// updates. Sinks are those of `topology`.
pub fn count_concurrent_interactions(trace: &Trace, topology: &Topology) -> i64 {
    let reach = Reachability::new(topology);
    let sinks: BTreeSet<NodeId> = reach.sinks().into_iter().collect();
    let mut generated = 0i64;
    let mut processed = 0i64;
    for e in trace.iter() {
        match &e.kind {
            EventKind::SourceEmit { .. } => {
                generated += reach.descendants(&e.node).intersection(&sinks).count() as i64;
            }
            EventKind::Update(_) if sinks.contains(&e.node) => processed += 1,
            _ => {}
        }
    }
    generated - processed
}

/// Livelock suspects.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallReport {
    pub window: u64,
    pub suspects: Vec<StallSuspect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallSuspect {
    pub node: NodeId,
    /// Change deliveries since the node last updated.
    pub deliveries: u64,
    /// Values held per predecessor.
    pub held: BTreeMap<NodeId, usize>,
}

impl StallReport {
    pub fn names(&self, node: &NodeId) -> bool {
        self.suspects.iter().any(|s| &s.node == node)
    }

    pub fn is_empty(&self) -> bool {
        self.suspects.is_empty()
    }
}

/// Nodes that received at least `window` change deliveries since their last
/// update (or since the start) while holding values from every predecessor.
/// Needs a full-level trace; input stores are rebuilt from deliveries,
/// prunes and cleared inputs.
pub fn detect_stall(trace: &Trace, window: u64) -> StallReport {
    let mut reach = Reachability::default();
    let mut held: BTreeMap<(NodeId, NodeId), BTreeSet<u64>> = BTreeMap::new();
    let mut since: BTreeMap<NodeId, u64> = BTreeMap::new();
    for e in trace.iter() {
        match &e.kind {
            EventKind::TopologyOp(record) => {
                let _ = reach.apply(record);
                if let TopologyRecord::InputCleared { pred, removed } = record {
                    if let Some(set) = held.get_mut(&(e.node.clone(), pred.clone())) {
                        for c in removed {
                            set.remove(c);
                        }
                    }
                }
            }
            EventKind::Deliver { from, message } => {
                if let Some(v) = &message.value {
                    if message.kind == "change" || message.kind == "sources" {
                        held.entry((e.node.clone(), from.clone())).or_default().insert(v.fclock);
                    }
                    if message.kind == "change" {
                        *since.entry(e.node.clone()).or_default() += 1;
                    }
                }
            }
            EventKind::Prune { pred, removed, .. } => {
                if let Some(set) = held.get_mut(&(e.node.clone(), pred.clone())) {
                    for c in removed {
                        set.remove(c);
                    }
                }
            }
            EventKind::Update(_) => {
                since.insert(e.node.clone(), 0);
            }
            _ => {}
        }
    }
    let mut suspects = Vec::new();
    for (node, deliveries) in since {
        if deliveries < window || deliveries == 0 {
            continue;
        }
        let preds = reach.preds(&node);
        if preds.is_empty() {
            continue;
        }
        let counts: BTreeMap<NodeId, usize> = preds
            .iter()
            .map(|p| (p.clone(), held.get(&(node.clone(), p.clone())).map_or(0, BTreeSet::len)))
            .collect();
        if counts.values().all(|c| *c > 0) {
            suspects.push(StallSuspect { node, deliveries, held: counts });
        }
    }
    StallReport { window, suspects }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate::diamond5;
    use crate::ids::nid;

    fn pv(from: &str, clocks: &[(&str, u64)], fclock: u64) -> PropagationValue {
        PropagationValue::new(nid(from), 0, clocks.iter().map(|(s, c)| (nid(s), *c)).collect(), fclock)
    }

    fn update(seq: u64, node: &str, args: Vec<PropagationValue>) -> TraceEvent {
        let result = pv(node, &[], seq);
        TraceEvent { seq, time: seq, node: nid(node), kind: EventKind::Update(UpdateRecord { args, result, trigger: None, cost: 0 }) }
    }

    #[test]
    fn forged_glitch_at_e_is_caught() {
        let bad = update(0, "E", vec![pv("C", &[("A", 1), ("B", 0)], 1), pv("D", &[("A", 0), ("B", 0)], 0)]);
        let trace = Trace { events: vec![bad.clone()] };
        let v = check_glitch_freedom(&trace, &diamond5()).unwrap();
        assert!(!v.holds);
        assert_eq!(v.witness, vec![bad]);
    }

    #[test]
    fn agreeing_arguments_pass() {
        let ok = update(0, "E", vec![pv("C", &[("A", 1), ("B", 1)], 2), pv("D", &[("A", 1), ("B", 1)], 2)]);
        assert!(check_glitch_freedom(&Trace { events: vec![ok] }, &diamond5()).unwrap().holds);
        assert!(check_glitch_freedom(&Trace::default(), &diamond5()).unwrap().holds);
    }

    #[test]
    fn missing_clock_is_a_glitch_only_without_topology_changes() {
        let partial = update(1, "E", vec![pv("C", &[("A", 1), ("B", 0)], 1), pv("D", &[("B", 0)], 0)]);
        let v = check_glitch_freedom(&Trace { events: vec![partial.clone()] }, &diamond5()).unwrap();
        assert!(!v.holds);
        let added = TraceEvent {
            seq: 0,
            time: 0,
            node: nid("D"),
            kind: EventKind::TopologyOp(TopologyRecord::EdgeAdded { from: nid("A"), to: nid("E") }),
        };
        let v = check_glitch_freedom(&Trace { events: vec![added, partial] }, &diamond5()).unwrap();
        assert!(v.holds);
    }

    #[test]
    fn out_of_order_sequence_is_malformed() {
        let a = update(3, "E", vec![]);
        let b = update(2, "E", vec![]);
        assert!(matches!(check_glitch_freedom(&Trace { events: vec![a, b] }, &diamond5()), Err(OracleError::MalformedTrace(_))));
    }

    #[test]
    fn decreasing_clock_breaks_monotonicity() {
        let first = update(0, "E", vec![pv("C", &[("A", 1)], 1)]);
        let second = update(1, "E", vec![pv("C", &[("A", 0)], 0)]);
        let v = check_monotonicity(&Trace { events: vec![first.clone(), second.clone()] }).unwrap();
        assert!(!v.holds);
        assert_eq!(v.witness, vec![first.clone(), second]);
        assert!(check_monotonicity(&Trace { events: vec![first] }).unwrap().holds);
    }

    #[test]
    fn consistency_compares_final_clocks() {
        let topo = diamond5();
        let clocks = BTreeMap::from([(nid("A"), 1), (nid("B"), 1)]);
        let mut finals: BTreeMap<NodeId, PropagationValue> =
            ["C", "D", "E"].iter().map(|n| (nid(n), pv(n, &[("A", 1), ("B", 1)], 2))).collect();
        assert!(check_consistency(&finals, &clocks, &topo, true, None).unwrap().holds);
        finals.insert(nid("E"), pv("E", &[("A", 1), ("B", 0)], 1));
        let v = check_consistency(&finals, &clocks, &topo, true, None).unwrap();
        assert!(!v.holds);
        assert_eq!(check_consistency(&finals, &clocks, &topo, false, None), Err(OracleError::NotQuiescent));
    }

    #[test]
    fn consistency_after_topology_change_needs_a_later_emission() {
        let topo = diamond5();
        let clocks = BTreeMap::from([(nid("A"), 1), (nid("B"), 1)]);
        let finals: BTreeMap<NodeId, PropagationValue> =
            ["C", "D", "E"].iter().map(|n| (nid(n), pv(n, &[("A", 1), ("B", 0)], 1))).collect();
        let emit = |seq, n: &str| TraceEvent {
            seq,
            time: seq,
            node: nid(n),
            kind: EventKind::SourceEmit { value: pv(n, &[(n, 1)], 1), requested_at: 0, cost: 0 },
        };
        let added = TraceEvent {
            seq: 5,
            time: 5,
            node: nid("C"),
            kind: EventKind::TopologyOp(TopologyRecord::EdgeAdded { from: nid("B"), to: nid("C") }),
        };
        let quiet_b = Trace { events: vec![emit(0, "B"), added.clone(), emit(6, "A")] };
        assert!(check_consistency(&finals, &clocks, &topo, true, Some(&quiet_b)).unwrap().holds);
        let late_b = Trace { events: vec![added, emit(6, "A"), emit(7, "B")] };
        assert!(!check_consistency(&finals, &clocks, &topo, true, Some(&late_b)).unwrap().holds);
    }

    #[test]
    fn exploration_tables_for_the_diamond() {
        let topo = diamond5();
        let both: BTreeSet<NodeId> = [nid("C"), nid("D")].into();
        let mut tables = BTreeMap::new();
        for n in ["C", "D"] {
            tables.insert(nid(n), BTreeMap::from([(nid("A"), BTreeSet::from([nid("A")])), (nid("B"), BTreeSet::from([nid("B")]))]));
        }
        tables.insert(nid("E"), BTreeMap::from([(nid("A"), both.clone()), (nid("B"), both)]));
        assert!(check_exploration(&topo, &tables).holds);
        tables.get_mut(&nid("E")).unwrap().remove(&nid("B"));
        assert!(!check_exploration(&topo, &tables).holds);
    }

    #[test]
    fn concurrent_interactions_count_merged_updates() {
        let emit = |seq, n: &str| TraceEvent {
            seq,
            time: seq,
            node: nid(n),
            kind: EventKind::SourceEmit { value: pv(n, &[(n, 1)], 1), requested_at: 0, cost: 0 },
        };
        let merged = update(2, "E", vec![pv("C", &[("A", 1), ("B", 1)], 1), pv("D", &[("A", 1), ("B", 1)], 1)]);
        let trace = Trace { events: vec![emit(0, "A"), emit(1, "B"), merged] };
        assert_eq!(count_concurrent_interactions(&trace, &diamond5()), 1);
    }

    #[test]
    fn stall_window_larger_than_trace_reports_nothing() {
        assert!(detect_stall(&Trace::default(), 10).is_empty());
    }
}
