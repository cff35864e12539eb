//! Centrally admitted propagation: one value traverses the graph at a time.
//!
//! Sources forward client requests to an admitter node. The admitter
//! releases one request at a time; the released source emits, every node
//! reachable from it updates exactly once after all of its affected
//! predecessors have, and the sinks report back. Only then is the next
//! request released.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::engine::NodeConfig;
use crate::graph::Topology;
use crate::ids::NodeId;
use crate::transport::{Ctx, EventKind, Process, TopologyCommand, UpdateRecord, WireMessage};
use crate::value::PropagationValue;

/// Process id of the admitter.
pub const ADMITTER: &str = "__admitter";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CentralMsg {
    /// Source to admitter: a client asked for `value`.
    Request { value: i64, requested_at: u64 },
    /// Admitter to source: emit now.
    Go { value: i64, requested_at: u64 },
    Pulse { source: NodeId, value: PropagationValue },
    /// Sink to admitter.
    Done { source: NodeId },
}

impl WireMessage for CentralMsg {
    fn kind(&self) -> &'static str {
        match self {
            CentralMsg::Request { .. } => "request",
            CentralMsg::Go { .. } => "go",
            CentralMsg::Pulse { .. } => "pulse",
            CentralMsg::Done { .. } => "done",
        }
    }

    fn is_control(&self) -> bool {
        false
    }

    fn value(&self) -> Option<&PropagationValue> {
        match self {
            CentralMsg::Pulse { value, .. } => Some(value),
            _ => None,
        }
    }

    fn detail(&self) -> Option<String> {
        match self {
            CentralMsg::Request { value, requested_at } | CentralMsg::Go { value, requested_at } => {
                Some(format!("value={value} requested_at={requested_at}"))
            }
            CentralMsg::Pulse { source, .. } | CentralMsg::Done { source } => Some(format!("source={source}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CentralError {
    #[error("{0} is not a source")]
    NotASource(NodeId),
    #[error("{node}: unexpected message {kind}")]
    Unexpected { node: NodeId, kind: &'static str },
    #[error("the central baseline does not support topology changes")]
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Admitter {
    id: NodeId,
    pending: VecDeque<(NodeId, i64, u64)>,
    /// Source of the propagation in flight and the sinks still to report.
    in_flight: Option<(NodeId, usize)>,
    sinks_of: BTreeMap<NodeId, usize>,
    admitted: u64,
}

impl Admitter {
    pub fn admitted(&self) -> u64 {
        self.admitted
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    fn release(&mut self, ctx: &mut Ctx<CentralMsg>) {
        if self.in_flight.is_some() {
            return;
        }
        if let Some((source, value, requested_at)) = self.pending.pop_front() {
            let sinks = self.sinks_of.get(&source).copied().unwrap_or(0).max(1);
            self.in_flight = Some((source.clone(), sinks));
            self.admitted += 1;
            ctx.send(&source, CentralMsg::Go { value, requested_at });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Member {
    id: NodeId,
    preds: BTreeSet<NodeId>,
    succs: BTreeSet<NodeId>,
    config: NodeConfig,
    /// Latest value of every predecessor.
    inputs: BTreeMap<NodeId, PropagationValue>,
    /// Per source, the predecessors a propagation from it arrives through.
    affected: BTreeMap<NodeId, BTreeSet<NodeId>>,
    received: BTreeSet<NodeId>,
    last: PropagationValue,
    clock: u64,
}

impl Member {
    pub fn last(&self) -> &PropagationValue {
        &self.last
    }

    fn admitter() -> NodeId {
        NodeId::new(ADMITTER)
    }

    fn emit(&mut self, value: i64, requested_at: u64, ctx: &mut Ctx<CentralMsg>) {
        self.clock += 1;
        let prop = PropagationValue::from_source(self.id.clone(), value, self.clock);
        self.last = prop.clone();
        ctx.charge(self.config.cost);
        ctx.record(EventKind::SourceEmit { value: prop.clone(), requested_at, cost: self.config.cost });
        self.forward(&self.id.clone(), prop, ctx);
    }

    fn forward(&self, source: &NodeId, prop: PropagationValue, ctx: &mut Ctx<CentralMsg>) {
        for succ in &self.succs {
            ctx.send(succ, CentralMsg::Pulse { source: source.clone(), value: prop.clone() });
        }
        if self.succs.is_empty() {
            ctx.send(&Member::admitter(), CentralMsg::Done { source: source.clone() });
        }
    }

    fn on_pulse(&mut self, from: &NodeId, source: NodeId, value: PropagationValue, ctx: &mut Ctx<CentralMsg>) {
        self.inputs.insert(from.clone(), value);
        self.received.insert(from.clone());
        let wanted = self.affected.get(&source).cloned().unwrap_or_default();
        if !wanted.is_subset(&self.received) {
            return;
        }
        self.received.clear();
        let args: Vec<PropagationValue> = self.preds.iter().filter_map(|p| self.inputs.get(p).cloned()).collect();
        let mut sclocks = BTreeMap::new();
        for a in &args {
            for (s, c) in &a.sclocks {
                sclocks.insert(s.clone(), *c);
            }
        }
        let values: Vec<i64> = args.iter().map(|a| a.value).collect();
        self.clock += 1;
        let prop = PropagationValue::new(self.id.clone(), self.config.update.apply(&values), sclocks, self.clock);
        self.last = prop.clone();
        ctx.charge(self.config.cost);
        ctx.record(EventKind::Update(UpdateRecord { args, result: prop.clone(), trigger: Some(from.clone()), cost: self.config.cost }));
        self.forward(&source, prop, ctx);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CentralNode {
    Admitter(Admitter),
    Member(Member),
}

impl CentralNode {
    pub fn as_member(&self) -> Option<&Member> {
        match self {
            CentralNode::Member(m) => Some(m),
            CentralNode::Admitter(_) => None,
        }
    }

    pub fn as_admitter(&self) -> Option<&Admitter> {
        match self {
            CentralNode::Admitter(a) => Some(a),
            CentralNode::Member(_) => None,
        }
    }
}

/// Builds the admitter and one member per node. Every node starts from its
/// initial value stamped with clock 0 for each source reaching it.
pub fn build(topology: &Topology, config_of: impl Fn(&NodeId) -> NodeConfig) -> Vec<CentralNode> {
    let sources = topology.sources();
    let feeds = |s: &NodeId, n: &NodeId| s == n || topology.reaches(s, n).unwrap_or(false);
    let reaching = |n: &NodeId| -> BTreeMap<NodeId, u64> { sources.iter().filter(|s| feeds(s, n)).map(|s| (s.clone(), 0)).collect() };
    let initial = |n: &NodeId| PropagationValue::new(n.clone(), config_of(n).init_val, reaching(n), 0);

    let sinks = topology.sinks();
    let sinks_of = sources
        .iter()
        .map(|s| (s.clone(), sinks.iter().filter(|t| feeds(s, t)).count()))
        .collect();
    let mut out = vec![CentralNode::Admitter(Admitter {
        id: NodeId::new(ADMITTER),
        pending: VecDeque::new(),
        in_flight: None,
        sinks_of,
        admitted: 0,
    })];
    for n in topology.nodes() {
        let preds = topology.preds(n).expect("own node").clone();
        let affected = sources
            .iter()
            .map(|s| (s.clone(), preds.iter().filter(|p| feeds(s, p)).cloned().collect::<BTreeSet<_>>()))
            .filter(|(_, ps)| !ps.is_empty())
            .collect();
        out.push(CentralNode::Member(Member {
            id: n.clone(),
            inputs: preds.iter().map(|p| (p.clone(), initial(p))).collect(),
            preds,
            succs: topology.succs(n).expect("own node").clone(),
            config: config_of(n),
            affected,
            received: BTreeSet::new(),
            last: initial(n),
            clock: 0,
        }));
    }
    out
}

impl Process for CentralNode {
    type Msg = CentralMsg;
    type Error = CentralError;

    fn id(&self) -> &NodeId {
        match self {
            CentralNode::Admitter(a) => &a.id,
            CentralNode::Member(m) => &m.id,
        }
    }

    fn on_start(&mut self, _ctx: &mut Ctx<CentralMsg>) -> Result<(), CentralError> {
        Ok(())
    }

    fn on_message(&mut self, from: &NodeId, msg: CentralMsg, ctx: &mut Ctx<CentralMsg>) -> Result<(), CentralError> {
        match (self, msg) {
            (CentralNode::Admitter(a), CentralMsg::Request { value, requested_at }) => {
                a.pending.push_back((from.clone(), value, requested_at));
                a.release(ctx);
            }
            (CentralNode::Admitter(a), CentralMsg::Done { source }) => {
                match a.in_flight.as_mut() {
                    Some((s, left)) if *s == source => {
                        *left -= 1;
                        if *left == 0 {
                            a.in_flight = None;
                        }
                    }
                    _ => return Err(CentralError::Unexpected { node: a.id.clone(), kind: "done" }),
                }
                a.release(ctx);
            }
            (CentralNode::Member(m), CentralMsg::Go { value, requested_at }) => m.emit(value, requested_at, ctx),
            (CentralNode::Member(m), CentralMsg::Pulse { source, value }) => m.on_pulse(from, source, value, ctx),
            (me, msg) => return Err(CentralError::Unexpected { node: me.id().clone(), kind: msg.kind() }),
        }
        Ok(())
    }

    fn on_emit(&mut self, value: i64, requested_at: u64, ctx: &mut Ctx<CentralMsg>) -> Result<(), CentralError> {
        match self {
            CentralNode::Member(m) if m.preds.is_empty() => {
                ctx.send(&Member::admitter(), CentralMsg::Request { value, requested_at });
                Ok(())
            }
            other => Err(CentralError::NotASource(other.id().clone())),
        }
    }

    fn on_topology(&mut self, _cmd: TopologyCommand, _ctx: &mut Ctx<CentralMsg>) -> Result<(), CentralError> {
        Err(CentralError::Unsupported)
    }

    fn stored_values(&self) -> usize {
        match self {
            CentralNode::Admitter(a) => a.pending.len(),
            CentralNode::Member(m) => m.inputs.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::generate::diamond5;
    use crate::ids::nid;
    use crate::transport::{RunStatus, SchedulerPolicy, SimConfig, Simulator};

    fn sim(cost: u64) -> Simulator<CentralNode> {
        let topo = diamond5();
        let procs = build(&topo, |_| NodeConfig { cost, ..NodeConfig::default() });
        let mut sim = Simulator::new(procs, topo, SimConfig::default(), SchedulerPolicy::RoundRobin);
        sim.start().unwrap();
        sim
    }

    #[test]
    fn three_requests_three_traversals() {
        let mut sim = sim(0);
        for (i, s) in ["A", "B", "A"].iter().enumerate() {
            sim.schedule_emit(0, nid(s), i as i64 + 1);
        }
        assert_eq!(sim.run_until_quiescent(10_000).unwrap(), RunStatus::Quiescent);
        assert_eq!(sim.trace().updates_at(&nid("E")).count(), 3);
        assert_eq!(sim.trace().updates_at(&nid("C")).count(), 3);
        let admitter = sim.process(&nid(ADMITTER)).unwrap().as_admitter().unwrap();
        assert_eq!(admitter.admitted(), 3);
        let last = sim.process(&nid("E")).unwrap().as_member().unwrap().last();
        assert_eq!(last.sclocks, BTreeMap::from([(nid("A"), 2), (nid("B"), 1)]));
    }

    #[test]
    fn one_request_updates_the_sink_once() {
        let mut sim = sim(0);
        sim.schedule_emit(0, nid("A"), 4);
        sim.run_until_quiescent(1000).unwrap();
        let e = nid("E");
        let updates: Vec<_> = sim.trace().updates_at(&e).collect();
        assert_eq!(updates.len(), 1);
        let args = &updates[0].args;
        assert_eq!(args[0].sclocks, args[1].sclocks);
    }

    #[test]
    fn serial_pipeline_paces_admissions() {
        let mut sim = sim(5);
        for i in 0..4 {
            sim.schedule_emit(0, nid("A"), i);
        }
        sim.run_until_quiescent(10_000).unwrap();
        let done: Vec<u64> = sim
            .trace()
            .updates()
            .filter(|(e, _)| e.node == nid("E"))
            .map(|(e, u)| e.time + u.cost)
            .collect();
        assert_eq!(done, vec![15, 30, 45, 60]);
    }
}
