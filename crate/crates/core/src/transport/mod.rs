//! Deterministic discrete-event network.
//!
//! One FIFO channel per ordered node pair, exactly-once delivery, integer
//! tick latency and a pluggable choice of which ready channel delivers next.
//! Request/response traffic shares the channel with data so per-channel order
//! is never violated; ready channels holding control messages are preferred.

mod scheduler;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::graph::{GraphError, Topology};
use crate::ids::NodeId;
use crate::value::PropagationValue;

pub use scheduler::{SchedulerPolicy, ScriptCursor, ScriptItem, ScriptStep};
use scheduler::{ChannelKey, Chooser};
pub use trace::{EventKind, MessageRecord, TopologyRecord, Trace, TraceEvent, TraceLevel, UpdateRecord};

/// Ticks per simulated second.
pub const TICKS_PER_SECOND: u64 = 1000;

/// Node id used for events that belong to the simulator rather than a node.
pub const SIM_NODE: &str = "__sim";

pub trait WireMessage {
    fn kind(&self) -> &'static str;
    /// Request/response traffic of a dynamic operation.
    fn is_control(&self) -> bool;
    fn value(&self) -> Option<&PropagationValue>;
    fn detail(&self) -> Option<String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopologyCommand {
    AddDependency { pred: NodeId },
    RemoveDependency { pred: NodeId },
}

/// A node program driven by the simulator.
pub trait Process: Clone + fmt::Debug {
    type Msg: WireMessage + Clone + fmt::Debug + Hash;
    type Error: fmt::Display;

    fn id(&self) -> &NodeId;
    fn on_start(&mut self, ctx: &mut Ctx<Self::Msg>) -> Result<(), Self::Error>;
    fn on_message(&mut self, from: &NodeId, msg: Self::Msg, ctx: &mut Ctx<Self::Msg>) -> Result<(), Self::Error>;
    /// A client request asking this node to emit `value`.
    fn on_emit(&mut self, value: i64, requested_at: u64, ctx: &mut Ctx<Self::Msg>) -> Result<(), Self::Error>;

    fn on_topology(&mut self, cmd: TopologyCommand, ctx: &mut Ctx<Self::Msg>) -> Result<(), Self::Error>;

    /// While blocked, external requests addressed to this node wait.
    fn is_blocked(&self) -> bool {
        false
    }

    /// Number of values currently held in input stores.
    fn stored_values(&self) -> usize {
        0
    }
}

#[derive(Debug, Clone)]
pub enum Effect<M> {
    Send(NodeId, M),
    Event(EventKind),
}

/// Handler context: collects sends, trace records and processing cost.
#[derive(Debug, Clone)]
pub struct Ctx<M> {
    me: NodeId,
    now: u64,
    effects: Vec<Effect<M>>,
    cost: u64,
    op_done: Option<Result<(), String>>,
}

impl<M> Ctx<M> {
    pub fn new(me: NodeId, now: u64) -> Self {
        Ctx { me, now, effects: Vec::new(), cost: 0, op_done: None }
    }

    pub fn me(&self) -> &NodeId {
        &self.me
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn send(&mut self, to: &NodeId, msg: M) {
        self.effects.push(Effect::Send(to.clone(), msg));
    }

    pub fn record(&mut self, kind: EventKind) {
        self.effects.push(Effect::Event(kind));
    }

    /// Adds processing time; sends issued by this handler leave after it.
    pub fn charge(&mut self, ticks: u64) {
        self.cost += ticks;
    }

    pub fn cost(&self) -> u64 {
        self.cost
    }

    /// Signals that the topology command started on this node has finished.
    pub fn finish_op(&mut self, result: Result<(), String>) {
        self.op_done = Some(result);
    }

    pub fn op_result(&self) -> Option<&Result<(), String>> {
        self.op_done.as_ref()
    }

    pub fn effects(&self) -> &[Effect<M>] {
        &self.effects
    }

    pub fn sent(&self) -> impl Iterator<Item = (&NodeId, &M)> {
        self.effects.iter().filter_map(|e| match e {
            Effect::Send(to, m) => Some((to, m)),
            Effect::Event(_) => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &EventKind> {
        self.effects.iter().filter_map(|e| match e {
            Effect::Event(k) => Some(k),
            Effect::Send(..) => None,
        })
    }

    pub fn take_effects(&mut self) -> Vec<Effect<M>> {
        std::mem::take(&mut self.effects)
    }
}

/// One step of a (possibly composite) topology operation.
#[derive(Debug, Clone)]
pub enum OpAction<P: Process> {
    AddDependency { node: NodeId, pred: NodeId },
    RemoveDependency { node: NodeId, pred: NodeId },
    /// Introduce a node that has no edges yet.
    Spawn(Box<P>),
    /// Wait until every channel into and out of `node` is empty.
    AwaitDrained(NodeId),
    Despawn(NodeId),
}

#[derive(Debug, Clone)]
enum Action<P: Process> {
    Emit { node: NodeId, value: i64 },
    Crash(NodeId),
    Recover(NodeId),
    Op { description: String, actions: Vec<OpAction<P>> },
}

impl<P: Process> Action<P> {
    fn target(&self) -> Option<&NodeId> {
        match self {
            Action::Emit { node, .. } => Some(node),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct InFlight<M> {
    msg_id: u64,
    ready_at: u64,
    msg: M,
}

#[derive(Debug, Clone)]
struct Channel<M> {
    queue: VecDeque<InFlight<M>>,
    control: usize,
}

impl<M> Default for Channel<M> {
    fn default() -> Self {
        Channel { queue: VecDeque::new(), control: 0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StoredStats {
    pub max: usize,
    pub sum: u64,
    pub samples: u64,
}

impl StoredStats {
    fn sample(&mut self, v: usize) {
        self.max = self.max.max(v);
        self.sum += v as u64;
        self.samples += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.sum as f64 / self.samples as f64
        }
    }
}

#[derive(Debug, Clone)]
struct Slot<P> {
    proc: P,
    busy_until: u64,
    crashed: bool,
    stats: StoredStats,
}

#[derive(Debug, Clone)]
struct ActiveOp {
    group: u64,
    node: NodeId,
    pred: NodeId,
    add: bool,
}

#[derive(Debug, Clone)]
struct QueuedOp<P: Process> {
    group: u64,
    description: String,
    action: OpAction<P>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown endpoint in send {from} -> {to}")]
    UnknownEndpoint { from: NodeId, to: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is already crashed")]
    AlreadyCrashed(NodeId),
    #[error("node {0} is not crashed")]
    NotCrashed(NodeId),
    #[error("request from {from} to crashed node {to}")]
    ReceiverCrashed { from: NodeId, to: NodeId },
    #[error("node {node}: {message}")]
    Process { node: NodeId, message: String },
    #[error("script: {0}")]
    Script(String),
    #[error("startup did not quiesce within {0} deliveries")]
    StartupStalled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Delivered,
    /// Ran a scripted, external or topology action without a delivery.
    Acted,
    /// Nothing ready; the clock jumped forward.
    Advanced,
    Quiescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Quiescent,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub latency: u64,
    pub channel_latency: BTreeMap<(NodeId, NodeId), u64>,
    pub trace_level: TraceLevel,
    pub startup_budget: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            latency: 0,
            channel_latency: BTreeMap::new(),
            trace_level: TraceLevel::Full,
            startup_budget: 10_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulator<P: Process> {
    slots: BTreeMap<NodeId, Slot<P>>,
    channels: BTreeMap<ChannelKey, Channel<P::Msg>>,
    mirror: Topology,
    config: SimConfig,
    policy: SchedulerPolicy,
    chooser: Chooser,
    script: Option<ScriptCursor<P>>,
    agenda: BTreeMap<(u64, u64), Action<P>>,
    agenda_seq: u64,
    ops: VecDeque<QueuedOp<P>>,
    active_op: Option<ActiveOp>,
    next_group: u64,
    now: u64,
    next_seq: u64,
    next_msg_id: u64,
    steps: u64,
    trace: Trace,
    started: bool,
}

impl<P: Process> Simulator<P> {
    /// `topology` mirrors the dependency edges; processes may include extra
    /// nodes outside it (e.g. a coordinator).
    pub fn new(procs: Vec<P>, topology: Topology, config: SimConfig, policy: SchedulerPolicy) -> Self {
        let slots = procs
            .into_iter()
            .map(|p| (p.id().clone(), Slot { proc: p, busy_until: 0, crashed: false, stats: StoredStats::default() }))
            .collect();
        Simulator {
            slots,
            channels: BTreeMap::new(),
            mirror: topology,
            chooser: Chooser::for_policy(&policy),
            policy,
            config,
            script: None,
            agenda: BTreeMap::new(),
            agenda_seq: 0,
            ops: VecDeque::new(),
            active_op: None,
            next_group: 0,
            now: 0,
            next_seq: 0,
            next_msg_id: 0,
            steps: 0,
            trace: Trace::default(),
            started: false,
        }
    }

    pub fn set_script(&mut self, items: Vec<ScriptItem<P>>) {
        self.script = Some(ScriptCursor::new(items));
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Takes the events recorded so far, leaving the trace empty.
    pub fn drain_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.trace.events)
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn topology(&self) -> &Topology {
        &self.mirror
    }

    pub fn process(&self, id: &NodeId) -> Option<&P> {
        self.slots.get(id).map(|s| &s.proc)
    }

    pub fn processes(&self) -> impl Iterator<Item = &P> {
        self.slots.values().map(|s| &s.proc)
    }

    pub fn stored_stats(&self) -> impl Iterator<Item = (&NodeId, &StoredStats)> {
        self.slots.iter().map(|(id, s)| (id, &s.stats))
    }

    pub fn is_crashed(&self, id: &NodeId) -> bool {
        self.slots.get(id).is_some_and(|s| s.crashed)
    }

    pub fn in_flight(&self) -> usize {
        self.channels.values().map(|c| c.queue.len()).sum()
    }

    pub fn channel_len(&self, from: &NodeId, to: &NodeId) -> usize {
        self.channels.get(&(from.clone(), to.clone())).map_or(0, |c| c.queue.len())
    }

    /// Messages queued on a channel, head first.
    pub fn channel_messages(&self, from: &NodeId, to: &NodeId) -> Vec<&P::Msg> {
        self.channels
            .get(&(from.clone(), to.clone()))
            .map(|c| c.queue.iter().map(|f| &f.msg).collect())
            .unwrap_or_default()
    }

    pub fn pending_actions(&self) -> usize {
        self.agenda.len() + self.ops.len() + usize::from(self.active_op.is_some())
    }

    pub fn op_in_progress(&self) -> bool {
        self.active_op.is_some() || !self.ops.is_empty()
    }

    fn record(&mut self, node: &NodeId, kind: EventKind) {
        if self.config.trace_level == TraceLevel::Light && !kind.is_light() {
            return;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.trace.events.push(TraceEvent { seq, time: self.now, node: node.clone(), kind });
    }

    fn latency(&self, from: &NodeId, to: &NodeId) -> u64 {
        self.config.channel_latency.get(&(from.clone(), to.clone())).copied().unwrap_or(self.config.latency)
    }

    fn record_message(msg_id: u64, msg: &P::Msg) -> MessageRecord {
        MessageRecord { msg_id, kind: msg.kind().to_string(), value: msg.value().cloned(), detail: msg.detail() }
    }

    fn enqueue(&mut self, from: &NodeId, to: &NodeId, msg: P::Msg, depart: u64) -> Result<(), SimError> {
        if !self.slots.contains_key(to) {
            return Err(SimError::UnknownEndpoint { from: from.clone(), to: to.clone() });
        }
        if msg.is_control() && self.slots[to].crashed && self.active_op.is_some() {
            return Err(SimError::ReceiverCrashed { from: from.clone(), to: to.clone() });
        }
        let msg_id = self.next_msg_id;
        self.next_msg_id += 1;
        if self.config.trace_level == TraceLevel::Full {
            let message = Self::record_message(msg_id, &msg);
            self.record(from, EventKind::Send { to: to.clone(), message });
        }
        let ready_at = depart + self.latency(from, to);
        let ch = self.channels.entry((from.clone(), to.clone())).or_default();
        if msg.is_control() {
            ch.control += 1;
        }
        ch.queue.push_back(InFlight { msg_id, ready_at, msg });
        Ok(())
    }

    /// Injects a message as if `from` had sent it now.
    pub fn send(&mut self, from: &NodeId, to: &NodeId, msg: P::Msg) -> Result<(), SimError> {
        if !self.slots.contains_key(from) {
            return Err(SimError::UnknownEndpoint { from: from.clone(), to: to.clone() });
        }
        self.enqueue(from, to, msg, self.now)
    }

    fn apply(&mut self, node: &NodeId, mut ctx: Ctx<P::Msg>) -> Result<(), SimError> {
        let depart = self.now + ctx.cost;
        for effect in ctx.take_effects() {
            match effect {
                Effect::Send(to, msg) => self.enqueue(node, &to, msg, depart)?,
                Effect::Event(kind) => self.record(node, kind),
            }
        }
        let slot = self.slots.get_mut(node).expect("apply on live node");
        if ctx.cost > 0 {
            slot.busy_until = slot.busy_until.max(depart);
        }
        let stored = slot.proc.stored_values();
        slot.stats.sample(stored);
        if let Some(result) = ctx.op_done.take() {
            self.finish_op(node, result)?;
        }
        Ok(())
    }

    fn process_error(node: &NodeId, e: impl fmt::Display) -> SimError {
        SimError::Process { node: node.clone(), message: e.to_string() }
    }

    /// Initialises every process and runs exploration and barrier to quiescence.
    pub fn start(&mut self) -> Result<(), SimError> {
        assert!(!self.started, "simulator already started");
        self.started = true;
        let nodes: Vec<NodeId> = self.mirror.nodes().iter().cloned().collect();
        self.record(
            &NodeId::new(SIM_NODE),
            EventKind::TopologyOp(TopologyRecord::Initial { nodes, edges: self.mirror.edges() }),
        );
        let ids: Vec<NodeId> = self.slots.keys().cloned().collect();
        for id in &ids {
            let mut ctx = Ctx::new(id.clone(), self.now);
            let slot = self.slots.get_mut(id).unwrap();
            slot.proc.on_start(&mut ctx).map_err(|e| Self::process_error(id, e))?;
            self.apply(id, ctx)?;
        }
        let mut startup = match &self.policy {
            SchedulerPolicy::SeededRandom(seed) => Chooser::for_policy(&SchedulerPolicy::SeededRandom(*seed)),
            _ => Chooser::for_policy(&SchedulerPolicy::RoundRobin),
        };
        let mut delivered = 0;
        loop {
            let ready = self.ready_channels();
            if ready.is_empty() {
                match self.next_wakeup() {
                    Some(t) => {
                        self.now = t;
                        continue;
                    }
                    None => break,
                }
            }
            let key = ready[startup.pick(&ready)].clone();
            self.deliver(&key)?;
            delivered += 1;
            if delivered > self.config.startup_budget {
                return Err(SimError::StartupStalled(self.config.startup_budget));
            }
        }
        Ok(())
    }

    fn push_action(&mut self, time: u64, action: Action<P>) {
        let key = (time, self.agenda_seq);
        self.agenda_seq += 1;
        self.agenda.insert(key, action);
    }

    pub fn schedule_emit(&mut self, time: u64, node: NodeId, value: i64) {
        self.push_action(time, Action::Emit { node, value });
    }

    pub fn schedule_crash(&mut self, time: u64, node: NodeId) {
        self.push_action(time, Action::Crash(node));
    }

    pub fn schedule_recover(&mut self, time: u64, node: NodeId) {
        self.push_action(time, Action::Recover(node));
    }

    pub fn schedule_op(&mut self, time: u64, description: String, actions: Vec<OpAction<P>>) {
        self.push_action(time, Action::Op { description, actions });
    }

    /// Number of scheduled-but-not-yet-dispatched emissions.
    pub fn pending_emissions(&self) -> usize {
        self.agenda.values().filter(|a| matches!(a, Action::Emit { .. })).count()
    }

    pub fn crash(&mut self, node: &NodeId) -> Result<(), SimError> {
        let slot = self.slots.get_mut(node).ok_or_else(|| SimError::UnknownNode(node.clone()))?;
        if slot.crashed {
            return Err(SimError::AlreadyCrashed(node.clone()));
        }
        slot.crashed = true;
        self.record(node, EventKind::Crash);
        Ok(())
    }

    pub fn recover(&mut self, node: &NodeId) -> Result<(), SimError> {
        let slot = self.slots.get_mut(node).ok_or_else(|| SimError::UnknownNode(node.clone()))?;
        if !slot.crashed {
            return Err(SimError::NotCrashed(node.clone()));
        }
        slot.crashed = false;
        slot.busy_until = slot.busy_until.max(self.now);
        self.record(node, EventKind::Recover);
        Ok(())
    }

    fn can_serve(&self, node: &NodeId) -> bool {
        self.slots
            .get(node)
            .is_some_and(|s| !s.crashed && s.busy_until <= self.now && !s.proc.is_blocked())
    }

    /// Asks `node` to emit immediately, regardless of the agenda.
    pub fn emit_now(&mut self, node: &NodeId, value: i64) -> Result<(), SimError> {
        self.emit_at(node, value, self.now)
    }

    fn emit_at(&mut self, node: &NodeId, value: i64, requested_at: u64) -> Result<(), SimError> {
        let slot = self.slots.get_mut(node).ok_or_else(|| SimError::UnknownNode(node.clone()))?;
        let mut ctx = Ctx::new(node.clone(), self.now);
        slot.proc.on_emit(value, requested_at, &mut ctx).map_err(|e| Self::process_error(node, e))?;
        self.apply(node, ctx)
    }

    /// Dispatches due agenda actions. Actions whose node cannot serve yet
    /// stay queued, and later actions for the same node wait behind them.
    fn process_agenda(&mut self) -> Result<bool, SimError> {
        let mut acted = false;
        let mut held: BTreeSet<NodeId> = BTreeSet::new();
        let due: Vec<(u64, u64)> = self.agenda.range(..=(self.now, u64::MAX)).map(|(k, _)| *k).collect();
        for key in due {
            let action = self.agenda[&key].clone();
            if matches!(action, Action::Crash(_)) && self.active_op.is_some() {
                continue;
            }
            if let Some(node) = action.target() {
                if held.contains(node) || !self.can_serve(node) || self.op_pending_for(node) {
                    held.insert(node.clone());
                    continue;
                }
            }
            self.agenda.remove(&key);
            acted = true;
            match action {
                Action::Emit { node, value } => self.emit_at(&node, value, key.0)?,
                Action::Crash(node) => self.crash(&node)?,
                Action::Recover(node) => self.recover(&node)?,
                Action::Op { description, actions } => self.enqueue_op(description, actions),
            }
        }
        Ok(acted)
    }

    /// A node whose own dependencies are about to change emits afterwards.
    fn op_pending_for(&self, node: &NodeId) -> bool {
        self.active_op.as_ref().is_some_and(|op| &op.node == node)
            || self.ops.iter().any(|q| {
                matches!(&q.action, OpAction::AddDependency { node: n, .. } | OpAction::RemoveDependency { node: n, .. } if n == node)
            })
    }

    fn enqueue_op(&mut self, description: String, actions: Vec<OpAction<P>>) {
        let group = self.next_group;
        self.next_group += 1;
        for action in actions {
            self.ops.push_back(QueuedOp { group, description: description.clone(), action });
        }
    }

    fn abort_group(&mut self, group: u64, description: &str, reason: String) {
        log::info!("topology operation '{description}' aborted: {reason}");
        self.ops.retain(|q| q.group != group);
        self.record(
            &NodeId::new(SIM_NODE),
            EventKind::TopologyOp(TopologyRecord::Aborted { description: description.to_string(), reason }),
        );
    }

    fn preflight(&self, node: &NodeId, pred: &NodeId, add: bool) -> Result<(), String> {
        for n in [node, pred] {
            if !self.slots.contains_key(n) || !self.mirror.contains(n) {
                return Err(GraphError::UnknownNode(n.clone()).to_string());
            }
        }
        if add {
            if node == pred || self.mirror.reaches(node, pred).unwrap_or(false) {
                return Err(format!("WouldCreateCycle: {pred} -> {node}"));
            }
            if self.mirror.has_edge(pred, node) {
                return Err(format!("{pred} is already a predecessor of {node}"));
            }
        } else if !self.mirror.has_edge(pred, node) {
            return Err(format!("NotAPredecessor: {pred} of {node}"));
        }
        let mut participants = self.mirror.descendants(node).unwrap_or_default();
        participants.insert(node.clone());
        participants.insert(pred.clone());
        if let Some(c) = participants.iter().find(|n| self.slots[*n].crashed) {
            return Err(format!("ReceiverCrashed: {c}"));
        }
        Ok(())
    }

    fn drained(&self, node: &NodeId) -> bool {
        let busy = self.slots.get(node).is_some_and(|s| s.proc.is_blocked());
        !busy
            && self
                .channels
                .iter()
                .all(|((a, b), ch)| ch.queue.is_empty() || (a != node && b != node))
    }

    /// Starts queued topology actions while none is in progress.
    fn process_ops(&mut self) -> Result<bool, SimError> {
        let mut acted = false;
        while self.active_op.is_none() {
            let Some(front) = self.ops.front() else { break };
            let (group, description) = (front.group, front.description.clone());
            match front.action.clone() {
                OpAction::AwaitDrained(node) => {
                    if !self.drained(&node) {
                        break;
                    }
                    self.ops.pop_front();
                }
                OpAction::Spawn(proc) => {
                    self.ops.pop_front();
                    let id = proc.id().clone();
                    if let Err(e) = self.mirror.add_node(id.clone()) {
                        self.abort_group(group, &description, e.to_string());
                        continue;
                    }
                    self.slots.insert(
                        id.clone(),
                        Slot { proc: *proc, busy_until: self.now, crashed: false, stats: StoredStats::default() },
                    );
                    self.record(&id, EventKind::TopologyOp(TopologyRecord::NodeAdded { node: id.clone() }));
                }
                OpAction::Despawn(node) => {
                    self.ops.pop_front();
                    if let Err(e) = self.mirror.remove_node(&node) {
                        self.abort_group(group, &description, e.to_string());
                        continue;
                    }
                    self.slots.remove(&node);
                    self.channels.retain(|(a, b), _| a != &node && b != &node);
                    self.agenda.retain(|_, a| a.target() != Some(&node));
                    self.record(&node, EventKind::TopologyOp(TopologyRecord::NodeRemoved { node: node.clone() }));
                }
                OpAction::AddDependency { node, pred } | OpAction::RemoveDependency { node, pred } => {
                    let add = matches!(front.action, OpAction::AddDependency { .. });
                    if self.slots.get(&node).is_some_and(|s| s.busy_until > self.now || s.proc.is_blocked()) {
                        break;
                    }
                    self.ops.pop_front();
                    if let Err(reason) = self.preflight(&node, &pred, add) {
                        self.abort_group(group, &description, reason);
                        continue;
                    }
                    let step = if add { format!("add_dep {node} {pred}") } else { format!("rem_dep {node} {pred}") };
                    self.record(&node, EventKind::TopologyOp(TopologyRecord::Started { description: step }));
                    self.active_op = Some(ActiveOp { group, node: node.clone(), pred: pred.clone(), add });
                    let cmd = if add {
                        TopologyCommand::AddDependency { pred }
                    } else {
                        TopologyCommand::RemoveDependency { pred }
                    };
                    let mut ctx = Ctx::new(node.clone(), self.now);
                    let slot = self.slots.get_mut(&node).unwrap();
                    slot.proc.on_topology(cmd, &mut ctx).map_err(|e| Self::process_error(&node, e))?;
                    self.apply(&node, ctx)?;
                }
            }
            acted = true;
        }
        Ok(acted)
    }

    fn finish_op(&mut self, node: &NodeId, result: Result<(), String>) -> Result<(), SimError> {
        let Some(op) = self.active_op.take() else {
            return Err(SimError::Process { node: node.clone(), message: "finished an op that was not started".into() });
        };
        if &op.node != node {
            return Err(SimError::Process {
                node: node.clone(),
                message: format!("op started on {} finished on {node}", op.node),
            });
        }
        match result {
            Ok(()) => {
                let record = if op.add {
                    self.mirror.add_edge(&op.pred, &op.node).map_err(|e| Self::process_error(node, e))?;
                    TopologyRecord::EdgeAdded { from: op.pred, to: op.node }
                } else {
                    self.mirror.remove_edge(&op.pred, &op.node).map_err(|e| Self::process_error(node, e))?;
                    TopologyRecord::EdgeRemoved { from: op.pred, to: op.node }
                };
                self.record(node, EventKind::TopologyOp(record));
            }
            Err(reason) => {
                let description = format!("{} {} {}", if op.add { "add_dep" } else { "rem_dep" }, op.node, op.pred);
                self.abort_group(op.group, &description, reason);
            }
        }
        Ok(())
    }

    fn deliverable(&self, key: &ChannelKey, ch: &Channel<P::Msg>) -> bool {
        let Some(head) = ch.queue.front() else { return false };
        let Some(slot) = self.slots.get(&key.1) else { return false };
        head.ready_at <= self.now && !slot.crashed && slot.busy_until <= self.now
    }

    /// Sorted ready channels, restricted to those carrying control traffic
    /// when any such channel is ready.
    fn ready_channels(&self) -> Vec<ChannelKey> {
        let mut ready = Vec::new();
        let mut control = Vec::new();
        for (key, ch) in &self.channels {
            if self.deliverable(key, ch) {
                if ch.control > 0 {
                    control.push(key.clone());
                }
                ready.push(key.clone());
            }
        }
        if control.is_empty() {
            ready
        } else {
            control
        }
    }

    /// Channels with at least one queued message whose receiver is not
    /// crashed, ignoring time. Used by exhaustive exploration.
    pub fn pending_channels(&self) -> Vec<(NodeId, NodeId)> {
        self.channels
            .iter()
            .filter(|(k, ch)| !ch.queue.is_empty() && self.slots.get(&k.1).is_some_and(|s| !s.crashed))
            .map(|(k, _)| k.clone())
            .collect()
    }

    fn next_wakeup(&self) -> Option<u64> {
        let mut best: Option<u64> = None;
        let mut consider = |t: u64| {
            if t > self.now {
                best = Some(best.map_or(t, |b| b.min(t)));
            }
        };
        for ((_, to), ch) in &self.channels {
            if let (Some(head), Some(slot)) = (ch.queue.front(), self.slots.get(to)) {
                if !slot.crashed {
                    consider(head.ready_at.max(slot.busy_until));
                }
            }
        }
        for ((time, _), action) in &self.agenda {
            match action.target().and_then(|n| self.slots.get(n)) {
                Some(slot) if slot.crashed || slot.proc.is_blocked() => {}
                Some(slot) => consider((*time).max(slot.busy_until)),
                None => consider(*time),
            }
        }
        if let Some(front) = self.ops.front() {
            if let OpAction::AddDependency { node, .. } | OpAction::RemoveDependency { node, .. } = &front.action {
                if let Some(slot) = self.slots.get(node) {
                    consider(slot.busy_until);
                }
            }
        }
        best
    }

    fn deliver(&mut self, key: &ChannelKey) -> Result<(), SimError> {
        let ch = self.channels.get_mut(key).expect("deliver on known channel");
        let flight = ch.queue.pop_front().expect("deliver on non-empty channel");
        if flight.msg.is_control() {
            ch.control -= 1;
        }
        let (from, to) = key;
        if self.config.trace_level == TraceLevel::Full {
            let message = Self::record_message(flight.msg_id, &flight.msg);
            self.record(to, EventKind::Deliver { from: from.clone(), message });
        }
        let mut ctx = Ctx::new(to.clone(), self.now);
        let slot = self.slots.get_mut(to).expect("receiver exists");
        slot.proc.on_message(from, flight.msg, &mut ctx).map_err(|e| Self::process_error(to, e))?;
        self.apply(to, ctx)?;
        self.steps += 1;
        Ok(())
    }

    /// Delivers the head of `from -> to` now, waiting out latency and busy
    /// time if necessary.
    pub fn deliver_from(&mut self, from: &NodeId, to: &NodeId) -> Result<(), SimError> {
        let key = (from.clone(), to.clone());
        let head_ready = match self.channels.get(&key).and_then(|c| c.queue.front()) {
            Some(head) => head.ready_at,
            None => return Err(SimError::Script(format!("no message in flight on {from} -> {to}"))),
        };
        let slot = self.slots.get(to).ok_or_else(|| SimError::UnknownNode(to.clone()))?;
        if slot.crashed {
            return Err(SimError::Script(format!("{to} is crashed")));
        }
        self.now = self.now.max(head_ready).max(slot.busy_until);
        self.deliver(&key)
    }

    /// Delivers control traffic until no channel holds any, then lets any
    /// queued topology operation run to completion the same way.
    fn drain_control(&mut self) -> Result<(), SimError> {
        loop {
            self.process_ops()?;
            let next = self.channels.iter().find(|(k, ch)| ch.control > 0 && !self.slots[&k.1].crashed).map(|(k, _)| k.clone());
            match next {
                Some(key) => {
                    let (from, to) = key;
                    self.deliver_from(&from, &to)?;
                }
                None => {
                    if self.active_op.is_some() {
                        return Err(SimError::Script("topology operation cannot make progress".into()));
                    }
                    if self.ops.is_empty() {
                        return Ok(());
                    }
                    match self.next_wakeup() {
                        Some(t) => self.now = t,
                        None => return Err(SimError::Script("topology operation cannot make progress".into())),
                    }
                }
            }
        }
    }

    fn script_step(&mut self, step: ScriptStep<P>) -> Result<(), SimError> {
        match step {
            ScriptStep::Emit { node, value } => {
                let slot = self.slots.get(&node).ok_or_else(|| SimError::UnknownNode(node.clone()))?;
                if slot.crashed || slot.proc.is_blocked() {
                    return Err(SimError::Script(format!("{node} cannot emit now")));
                }
                self.now = self.now.max(slot.busy_until);
                self.emit_now(&node, value)?;
            }
            ScriptStep::Deliver { from, to } => self.deliver_from(&from, &to)?,
            ScriptStep::Op { description, actions } => self.enqueue_op(description, actions),
            ScriptStep::Crash(node) => self.crash(&node)?,
            ScriptStep::Recover(node) => self.recover(&node)?,
            ScriptStep::Nop => {}
        }
        self.drain_control()
    }

    pub fn step(&mut self) -> Result<StepOutcome, SimError> {
        debug_assert!(self.started, "call start() first");
        let mut acted = self.process_agenda()?;
        acted |= self.process_ops()?;
        if let Some(cursor) = self.script.as_mut() {
            match cursor.next_step() {
                Some(step) => {
                    self.script_step(step)?;
                    self.steps += 1;
                    return Ok(StepOutcome::Acted);
                }
                None => self.script = None,
            }
        }
        let ready = self.ready_channels();
        if !ready.is_empty() {
            let key = ready[self.chooser.pick(&ready)].clone();
            self.deliver(&key)?;
            return Ok(StepOutcome::Delivered);
        }
        if acted {
            return Ok(StepOutcome::Acted);
        }
        match self.next_wakeup() {
            Some(t) => {
                self.now = t;
                Ok(StepOutcome::Advanced)
            }
            None => Ok(StepOutcome::Quiescent),
        }
    }

    /// Steps until quiescence or until `max_steps` steps (deliveries and
    /// script steps) have been taken since the call.
    pub fn run_until_quiescent(&mut self, max_steps: u64) -> Result<RunStatus, SimError> {
        let budget_end = self.steps.saturating_add(max_steps);
        loop {
            if self.steps >= budget_end {
                return Ok(if self.step_would_quiesce() { RunStatus::Quiescent } else { RunStatus::BudgetExhausted });
            }
            if self.step()? == StepOutcome::Quiescent {
                return Ok(RunStatus::Quiescent);
            }
        }
    }

    fn step_would_quiesce(&self) -> bool {
        self.script.as_ref().is_none_or(|c| c.is_done())
            && self.ready_channels().is_empty()
            && self.next_wakeup().is_none()
            && !self.agenda.keys().any(|(t, _)| *t <= self.now)
            && self.ops.is_empty()
    }

    /// Hashes the protocol-relevant state: processes, crash flags and
    /// channel contents (message ids and timing excluded).
    pub fn fingerprint<H: Hasher>(&self, h: &mut H)
    where
        P: Hash,
    {
        for (id, slot) in &self.slots {
            id.hash(h);
            slot.proc.hash(h);
            slot.crashed.hash(h);
        }
        for (key, ch) in &self.channels {
            if ch.queue.is_empty() {
                continue;
            }
            key.hash(h);
            for f in &ch.queue {
                f.msg.hash(h);
            }
        }
    }
}
