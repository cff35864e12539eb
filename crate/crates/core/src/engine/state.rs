use std::collections::{BTreeMap, BTreeSet};

use crate::ids::NodeId;
use crate::message::Message;
use crate::transport::{Ctx, EventKind};
use crate::value::{PropagationValue, UpdateFn};

use super::EngineError;

pub const DEFAULT_SEARCH_BUDGET: u64 = 1_000_000;

/// Stored values per predecessor above which a warning is logged once.
pub const STORE_WARNING: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeConfig {
    pub update: UpdateFn,
    pub init_val: i64,
    /// Ticks charged per update invocation or source emission.
    pub cost: u64,
    pub search_budget: u64,
    /// Maximum values held per predecessor; `None` is unbounded.
    pub store_bound: Option<usize>,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig { update: UpdateFn::Sum, init_val: 0, cost: 0, search_budget: DEFAULT_SEARCH_BUDGET, store_bound: None }
    }
}

impl NodeConfig {
    pub fn new(update: UpdateFn, init_val: i64) -> Self {
        NodeConfig { update, init_val, ..NodeConfig::default() }
    }
}

/// A node's protocol state: `DP`, `DS`, `I`, `S`, `U`, `initVal`,
/// `lastProp`, `self`, `clock`, the brittle store `B_r` and phase counters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeState {
    pub id: NodeId,
    pub dp: BTreeSet<NodeId>,
    pub ds: BTreeSet<NodeId>,
    /// `I`: per predecessor, values in ascending fClock order.
    pub inputs: BTreeMap<NodeId, Vec<PropagationValue>>,
    /// `S`: source -> predecessors carrying its values.
    pub routing: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// `B_r`: values from brittle predecessors, held back.
    pub brittle: BTreeMap<NodeId, Vec<PropagationValue>>,
    pub config: NodeConfig,
    pub last_prop: Option<PropagationValue>,
    pub clock: u64,
    pub sources_received: usize,
    pub starts_received: usize,
    pub initialized: bool,
    /// Exploration finished locally (`sourcesReceived == |DP|`).
    pub explored: bool,
    /// A source that has passed the barrier.
    pub may_emit: bool,
    warned: bool,
}

impl NodeState {
    pub fn new(id: NodeId, dp: BTreeSet<NodeId>, ds: BTreeSet<NodeId>, config: NodeConfig) -> Self {
        NodeState {
            id,
            dp,
            ds,
            inputs: BTreeMap::new(),
            routing: BTreeMap::new(),
            brittle: BTreeMap::new(),
            config,
            last_prop: None,
            clock: 0,
            sources_received: 0,
            starts_received: 0,
            initialized: false,
            explored: false,
            may_emit: false,
            warned: false,
        }
    }

    /// A node joining a running graph: no predecessors yet, so it starts out
    /// as a source that is already past the barrier.
    pub fn joining(id: NodeId, config: NodeConfig) -> Self {
        let mut s = NodeState::new(id.clone(), BTreeSet::new(), BTreeSet::new(), config);
        s.initialized = true;
        s.explored = true;
        s.may_emit = true;
        s.last_prop = Some(PropagationValue::from_source(id, s.config.init_val, 0));
        s
    }

    pub fn is_source(&self) -> bool {
        self.dp.is_empty()
    }

    pub fn current_value(&self) -> Option<i64> {
        self.last_prop.as_ref().map(|p| p.value)
    }

    pub fn stored_values(&self) -> usize {
        self.inputs.values().map(Vec::len).sum::<usize>() + self.brittle.values().map(Vec::len).sum::<usize>()
    }

    pub(crate) fn protocol(&self, detail: impl Into<String>) -> EngineError {
        EngineError::Protocol { node: self.id.clone(), detail: detail.into() }
    }

    /// Exploration start: an empty input set per predecessor; sources stamp
    /// their initial value and announce themselves downstream.
    pub fn init_exploration(&mut self, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        if self.initialized {
            return Err(EngineError::AlreadyInitialized(self.id.clone()));
        }
        self.initialized = true;
        self.sources_received = 0;
        for pred in &self.dp {
            self.inputs.insert(pred.clone(), Vec::new());
        }
        if self.is_source() {
            let init = PropagationValue::from_source(self.id.clone(), self.config.init_val, 0);
            self.last_prop = Some(init.clone());
            self.explored = true;
            let sources = BTreeSet::from([self.id.clone()]);
            for succ in &self.ds {
                ctx.send(succ, Message::Sources { sources: sources.clone(), init: init.clone() });
            }
            if self.ds.is_empty() {
                self.may_emit = true;
            }
        }
        Ok(())
    }

    pub fn handle_sources(
        &mut self,
        sources: &BTreeSet<NodeId>,
        init: PropagationValue,
        ctx: &mut Ctx<Message>,
    ) -> Result<(), EngineError> {
        let from = init.from.clone();
        if !self.dp.contains(&from) {
            return Err(EngineError::UnknownPredecessor { node: self.id.clone(), pred: from });
        }
        insert_ordered(self.inputs.entry(from.clone()).or_default(), init);
        self.sources_received += 1;
        for s in sources {
            self.routing.entry(s.clone()).or_default().insert(from.clone());
        }
        if self.sources_received == self.dp.len() {
            let all: BTreeSet<NodeId> = self.routing.keys().cloned().collect();
            let clocks = all.iter().map(|s| (s.clone(), 0)).collect();
            let last = PropagationValue::new(self.id.clone(), self.config.init_val, clocks, 0);
            self.last_prop = Some(last.clone());
            self.explored = true;
            for succ in &self.ds {
                ctx.send(succ, Message::Sources { sources: all.clone(), init: last.clone() });
            }
            self.init_barrier(ctx);
        }
        Ok(())
    }

    /// A fully explored sink asks its predecessors to start.
    pub fn init_barrier(&mut self, ctx: &mut Ctx<Message>) {
        if self.ds.is_empty() && self.explored && !self.dp.is_empty() {
            for pred in &self.dp {
                ctx.send(pred, Message::Start);
            }
        }
    }

    pub fn handle_start(&mut self, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        self.starts_received += 1;
        if self.starts_received == self.ds.len() {
            if self.is_source() {
                self.may_emit = true;
            } else {
                for pred in &self.dp {
                    ctx.send(pred, Message::Start);
                }
            }
        }
        Ok(())
    }

    pub fn source_emit(&mut self, value: i64, requested_at: u64, ctx: &mut Ctx<Message>) -> Result<PropagationValue, EngineError> {
        if !self.is_source() {
            return Err(EngineError::NotASource(self.id.clone()));
        }
        if !self.may_emit {
            return Err(EngineError::BarrierNotPassed(self.id.clone()));
        }
        self.clock += 1;
        let prop = PropagationValue::from_source(self.id.clone(), value, self.clock);
        self.last_prop = Some(prop.clone());
        ctx.charge(self.config.cost);
        ctx.record(EventKind::SourceEmit { value: prop.clone(), requested_at, cost: self.config.cost });
        for succ in &self.ds {
            ctx.send(succ, Message::Change { value: prop.clone() });
        }
        Ok(prop)
    }

    /// Adds `v` to `I.from` (set union on fClock) and enforces the bound.
    pub(crate) fn store_input(&mut self, v: PropagationValue) -> Result<(), EngineError> {
        let pred = v.from.clone();
        let seq = self.inputs.entry(pred.clone()).or_default();
        insert_ordered(seq, v);
        let stored = seq.len();
        if let Some(bound) = self.config.store_bound {
            if stored > bound {
                return Err(EngineError::StallSuspected { node: self.id.clone(), pred, stored, bound });
            }
        }
        if stored >= STORE_WARNING && !self.warned {
            self.warned = true;
            log::warn!("{}: {} values stored for {}", self.id, stored, pred);
        }
        Ok(())
    }
}

/// Inserts keeping ascending fClock order; an equal fClock is not duplicated.
pub(crate) fn insert_ordered(seq: &mut Vec<PropagationValue>, v: PropagationValue) {
    match seq.binary_search_by_key(&v.fclock, |x| x.fclock) {
        Ok(_) => {}
        Err(pos) => seq.insert(pos, v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;

    fn set(names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|n| nid(n)).collect()
    }

    fn ctx(n: &str) -> Ctx<Message> {
        Ctx::new(nid(n), 0)
    }

    #[test]
    fn source_initialisation_announces_itself() {
        let mut a = NodeState::new(nid("A"), set(&[]), set(&["C", "D"]), NodeConfig::new(UpdateFn::Sum, 5));
        let mut c = ctx("A");
        a.init_exploration(&mut c).unwrap();
        assert_eq!(a.last_prop, Some(PropagationValue::from_source(nid("A"), 5, 0)));
        let targets: Vec<&NodeId> = c.sent().map(|(to, _)| to).collect();
        assert_eq!(targets, vec![&nid("C"), &nid("D")]);
        assert!(matches!(a.init_exploration(&mut ctx("A")), Err(EngineError::AlreadyInitialized(_))));
    }

    #[test]
    fn intermediate_initialisation_is_silent() {
        let mut cnode = NodeState::new(nid("C"), set(&["A", "B"]), set(&["E"]), NodeConfig::default());
        let mut c = ctx("C");
        cnode.init_exploration(&mut c).unwrap();
        assert_eq!(c.sent().count(), 0);
        assert_eq!(cnode.inputs.len(), 2);
        assert!(cnode.inputs.values().all(Vec::is_empty));
    }

    #[test]
    fn isolated_source_may_emit_at_once() {
        let mut s = NodeState::new(nid("S"), set(&[]), set(&[]), NodeConfig::default());
        let mut c = ctx("S");
        s.init_exploration(&mut c).unwrap();
        assert_eq!(c.sent().count(), 0);
        assert!(s.may_emit);
    }

    #[test]
    fn sink_with_single_pred_relays_and_starts() {
        let mut n = NodeState::new(nid("E"), set(&["C"]), set(&[]), NodeConfig::new(UpdateFn::Sum, 10));
        n.init_exploration(&mut ctx("E")).unwrap();
        let init = PropagationValue::new(nid("C"), 8, [(nid("A"), 0)].into_iter().collect(), 0);
        let mut c = ctx("E");
        n.handle_sources(&set(&["A"]), init, &mut c).unwrap();
        let sent: Vec<_> = c.sent().collect();
        assert_eq!(sent.len(), 1);
        assert_eq!(sent[0], (&nid("C"), &Message::Start));
    }

    #[test]
    fn start_counting() {
        let mut a = NodeState::new(nid("A"), set(&[]), set(&["C", "D"]), NodeConfig::default());
        a.init_exploration(&mut ctx("A")).unwrap();
        a.handle_start(&mut ctx("A")).unwrap();
        assert!(!a.may_emit);
        a.handle_start(&mut ctx("A")).unwrap();
        assert!(a.may_emit);
    }

    #[test]
    fn emission_requires_barrier_and_source() {
        let mut a = NodeState::new(nid("A"), set(&[]), set(&["C"]), NodeConfig::default());
        a.init_exploration(&mut ctx("A")).unwrap();
        assert!(matches!(a.source_emit(7, 0, &mut ctx("A")), Err(EngineError::BarrierNotPassed(_))));
        a.handle_start(&mut ctx("A")).unwrap();
        let v = a.source_emit(7, 0, &mut ctx("A")).unwrap();
        assert_eq!(v, PropagationValue::from_source(nid("A"), 7, 1));
        let v = a.source_emit(9, 0, &mut ctx("A")).unwrap();
        assert_eq!(v, PropagationValue::from_source(nid("A"), 9, 2));

        let mut cnode = NodeState::new(nid("C"), set(&["A"]), set(&[]), NodeConfig::default());
        assert!(matches!(cnode.source_emit(1, 0, &mut ctx("C")), Err(EngineError::NotASource(_))));
    }

    #[test]
    fn unknown_predecessor_in_sources() {
        let mut n = NodeState::new(nid("E"), set(&["C"]), set(&[]), NodeConfig::default());
        n.init_exploration(&mut ctx("E")).unwrap();
        let init = PropagationValue::from_source(nid("Z"), 0, 0);
        assert!(matches!(
            n.handle_sources(&set(&["Z"]), init, &mut ctx("E")),
            Err(EngineError::UnknownPredecessor { .. })
        ));
    }

    #[test]
    fn ordered_insert_dedups() {
        let mut seq = Vec::new();
        for fc in [2, 0, 1, 2] {
            insert_ordered(&mut seq, PropagationValue::from_source(nid("A"), fc as i64, fc));
        }
        let clocks: Vec<u64> = seq.iter().map(|v| v.fclock).collect();
        assert_eq!(clocks, vec![0, 1, 2]);
    }
}
