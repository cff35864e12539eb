//! A QPROP node as a simulator process: the engine state plus the
//! request/reply bookkeeping of dynamic operations.

use std::collections::{BTreeSet, VecDeque};

use crate::dynamic::{DynamicOpKind, DynamicOpStatus, OpPhase};
use crate::engine::{EngineError, NodeConfig, NodeState};
use crate::ids::NodeId;
use crate::message::{Message, Reply, Request};
use crate::transport::{Ctx, EventKind, Process, TopologyCommand, TopologyRecord};
use crate::value::PropagationValue;

/// Who is waiting for a frame to finish.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Origin {
    /// The topology command started on this node.
    Op(DynamicOpKind),
    Remote { node: NodeId, id: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Awaiting {
    Nothing,
    NewSucc { id: u64, pred: NodeId },
    RemSucc { id: u64, pred: NodeId },
    Relay { id: u64 },
}

/// One pending handler invocation: requests still to send, one at a time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Frame {
    origin: Origin,
    awaiting: Awaiting,
    outbox: VecDeque<(NodeId, Request)>,
    /// Update with this value once the frame completes (a former source
    /// computing its first value).
    then_update: Option<PropagationValue>,
    /// Emit this value as a source once the frame completes (a node that
    /// just lost its last predecessor publishing its value under its own
    /// clock).
    then_emit: Option<i64>,
}

impl Frame {
    fn new(origin: Origin) -> Frame {
        Frame { origin, awaiting: Awaiting::Nothing, outbox: VecDeque::new(), then_update: None, then_emit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QpropNode {
    state: NodeState,
    /// QPROP^d: accept topology commands and run pre-propagation.
    dynamic: bool,
    frames: Vec<Frame>,
    deferred: VecDeque<PropagationValue>,
    next_req: u64,
    /// Predecessors dropped by a removal whose late changes are discarded.
    removed_preds: BTreeSet<NodeId>,
}

impl QpropNode {
    pub fn new(id: NodeId, dp: BTreeSet<NodeId>, ds: BTreeSet<NodeId>, config: NodeConfig, dynamic: bool) -> Self {
        QpropNode::from_state(NodeState::new(id, dp, ds, config), dynamic)
    }

    /// A node created while the graph is running.
    pub fn joining(id: NodeId, config: NodeConfig) -> Self {
        QpropNode::from_state(NodeState::joining(id, config), true)
    }

    fn from_state(state: NodeState, dynamic: bool) -> Self {
        QpropNode { state, dynamic, frames: Vec::new(), deferred: VecDeque::new(), next_req: 0, removed_preds: BTreeSet::new() }
    }

    pub fn state(&self) -> &NodeState {
        &self.state
    }

    pub fn is_dynamic(&self) -> bool {
        self.dynamic
    }

    /// Changes held back while a dynamic operation is in progress here.
    pub fn deferred(&self) -> usize {
        self.deferred.len()
    }

    /// Status of the operation this node initiated, if one is running.
    pub fn op_status(&self) -> Option<DynamicOpStatus> {
        let root = self.frames.first()?;
        let Origin::Op(kind) = root.origin else { return None };
        let phase = match (&root.awaiting, self.frames.len()) {
            (Awaiting::NewSucc { .. } | Awaiting::RemSucc { .. }, 1) => OpPhase::Requesting,
            _ => OpPhase::PropagatingTables,
        };
        Some(DynamicOpStatus { kind, initiator: self.state.id.clone(), phase })
    }

    fn request(&mut self, to: &NodeId, body: Request, ctx: &mut Ctx<Message>) -> u64 {
        let id = self.next_req;
        self.next_req += 1;
        ctx.send(to, Message::Request { id, body });
        id
    }

    fn relay_all(&self, frame: &mut Frame, body: impl Fn() -> Request) {
        for succ in &self.state.ds {
            frame.outbox.push_back((succ.clone(), body()));
        }
    }

    /// Sends the next queued request of the top frame, or completes frames
    /// until one is left waiting.
    fn advance(&mut self, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        while let Some(top) = self.frames.last_mut() {
            if top.awaiting != Awaiting::Nothing {
                return Ok(());
            }
            if let Some((to, body)) = top.outbox.pop_front() {
                let id = self.next_req;
                self.next_req += 1;
                top.awaiting = Awaiting::Relay { id };
                ctx.send(&to, Message::Request { id, body });
                continue;
            }
            let done = self.frames.pop().expect("top frame");
            if let Some(v) = done.then_update {
                self.state.try_update(&v, ctx)?;
            }
            if let Some(value) = done.then_emit {
                self.state.source_emit(value, ctx.now(), ctx)?;
            }
            match done.origin {
                Origin::Op(_) => ctx.finish_op(Ok(())),
                Origin::Remote { node, id } => ctx.send(&node, Message::Reply { id, body: Reply::Done }),
            }
        }
        self.replay_deferred(ctx)
    }

    fn replay_deferred(&mut self, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        while self.frames.is_empty() {
            let Some(v) = self.deferred.pop_front() else { break };
            self.process_change(v, ctx)?;
        }
        Ok(())
    }

    fn process_change(&mut self, v: PropagationValue, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        if !self.state.dp.contains(&v.from) && self.removed_preds.contains(&v.from) {
            log::debug!("{}: dropping change from removed predecessor {}", self.state.id, v.from);
            return Ok(());
        }
        if self.dynamic {
            self.state.pre_propagate(v, ctx)?;
        } else {
            self.state.handle_change(v, ctx)?;
        }
        Ok(())
    }

    fn on_request(&mut self, from: &NodeId, id: u64, body: Request, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        let me = self.state.id.clone();
        match body {
            Request::NewSucc { succ } => {
                let (last, sources) = self.state.handle_new_succ(&succ);
                ctx.send(from, Message::Reply { id, body: Reply::NewSucc { last, sources } });
                Ok(())
            }
            Request::RemSucc { succ } => {
                let sources = self.state.handle_rem_succ(&succ);
                ctx.send(from, Message::Reply { id, body: Reply::RemSucc { sources } });
                Ok(())
            }
            Request::AddSources { from: pred, sources } => {
                self.state.add_sources_local(&pred, &sources, ctx);
                let mut frame = Frame::new(Origin::Remote { node: from.clone(), id });
                self.relay_all(&mut frame, || Request::AddSources { from: me.clone(), sources: sources.clone() });
                self.frames.push(frame);
                self.advance(ctx)
            }
            Request::RemSources { from: pred, sources } => {
                let removed = self.state.rem_sources_local(&pred, &sources, ctx);
                let mut frame = Frame::new(Origin::Remote { node: from.clone(), id });
                if !removed.is_empty() {
                    self.relay_all(&mut frame, || Request::RemSources { from: me.clone(), sources: removed.clone() });
                }
                self.frames.push(frame);
                self.advance(ctx)
            }
            Request::AddSource { from: pred, source } => {
                self.state.add_source_local(&pred, &source, ctx);
                let mut frame = Frame::new(Origin::Remote { node: from.clone(), id });
                self.relay_all(&mut frame, || Request::AddSource { from: me.clone(), source: source.clone() });
                self.frames.push(frame);
                self.advance(ctx)
            }
        }
    }

    fn on_reply(&mut self, id: u64, body: Reply, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        let me = self.state.id.clone();
        let Some(top) = self.frames.last_mut() else {
            return Err(self.state.protocol(format!("unexpected reply #{id}")));
        };
        let awaiting = std::mem::replace(&mut top.awaiting, Awaiting::Nothing);
        match (awaiting, body) {
            (Awaiting::Relay { id: want }, Reply::Done) if want == id => {}
            (Awaiting::NewSucc { id: want, pred }, Reply::NewSucc { last, sources }) if want == id => {
                self.removed_preds.remove(&pred);
                let was_source = self.state.accept_new_pred(&pred, last.clone(), &sources);
                self.state.add_sources_local(&pred, &sources, ctx);
                let mut frame = self.frames.pop().expect("top frame");
                self.relay_all(&mut frame, || Request::AddSources { from: me.clone(), sources: sources.clone() });
                if was_source {
                    ctx.record(EventKind::TopologyOp(TopologyRecord::RetiredSource));
                    let own = BTreeSet::from([me.clone()]);
                    self.relay_all(&mut frame, || Request::RemSources { from: me.clone(), sources: own.clone() });
                    if self.state.inputs.contains_key(&pred) {
                        frame.then_update = last;
                    }
                }
                self.frames.push(frame);
            }
            (Awaiting::RemSucc { id: want, pred }, Reply::RemSucc { sources }) if want == id => {
                self.state.drop_pred(&pred);
                self.removed_preds.insert(pred.clone());
                let removed = self.state.rem_sources_local(&pred, &sources, ctx);
                let mut frame = self.frames.pop().expect("top frame");
                if !removed.is_empty() {
                    self.relay_all(&mut frame, || Request::RemSources { from: me.clone(), sources: removed.clone() });
                    // Successors that still reach a removed source through
                    // someone else have emptied I.me; recompute once the
                    // relays are done so they are not left waiting.
                    frame.then_update = self.state.inputs.values().find_map(|seq| seq.last().cloned());
                }
                if self.state.is_source() {
                    self.state.may_emit = true;
                    ctx.record(EventKind::TopologyOp(TopologyRecord::BecameSource));
                    self.relay_all(&mut frame, || Request::AddSource { from: me.clone(), source: me.clone() });
                    frame.then_update = None;
                    frame.then_emit = self.state.last_prop.as_ref().map(|v| v.value);
                }
                self.frames.push(frame);
            }
            (awaiting, body) => {
                return Err(self.state.protocol(format!("reply #{id} ({body:?}) does not match {awaiting:?}")));
            }
        }
        self.advance(ctx)
    }
}

impl Process for QpropNode {
    type Msg = Message;
    type Error = EngineError;

    fn id(&self) -> &NodeId {
        &self.state.id
    }

    fn on_start(&mut self, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        if self.state.initialized {
            return Ok(());
        }
        self.state.init_exploration(ctx)
    }

    fn on_message(&mut self, from: &NodeId, msg: Message, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        match msg {
            Message::Sources { sources, init } => self.state.handle_sources(&sources, init, ctx),
            Message::Start => self.state.handle_start(ctx),
            Message::Change { value } => {
                if !self.frames.is_empty() || !self.deferred.is_empty() {
                    self.deferred.push_back(value);
                    Ok(())
                } else {
                    self.process_change(value, ctx)
                }
            }
            Message::Request { id, body } => self.on_request(from, id, body, ctx),
            Message::Reply { id, body } => self.on_reply(id, body, ctx),
        }
    }

    fn on_emit(&mut self, value: i64, requested_at: u64, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        self.state.source_emit(value, requested_at, ctx).map(|_| ())
    }

    fn on_topology(&mut self, cmd: TopologyCommand, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        if !self.dynamic {
            return Err(self.state.protocol("topology changes need the dynamic engine"));
        }
        if !self.frames.is_empty() {
            return Err(self.state.protocol("a dynamic operation is already in progress"));
        }
        let me = self.state.id.clone();
        match cmd {
            TopologyCommand::AddDependency { pred } => {
                let mut frame = Frame::new(Origin::Op(DynamicOpKind::AddDependency));
                let id = self.request(&pred, Request::NewSucc { succ: me }, ctx);
                frame.awaiting = Awaiting::NewSucc { id, pred };
                self.frames.push(frame);
            }
            TopologyCommand::RemoveDependency { pred } => {
                if !self.state.dp.contains(&pred) {
                    return Err(EngineError::NotAPredecessor { node: me, pred });
                }
                let mut frame = Frame::new(Origin::Op(DynamicOpKind::RemoveDependency));
                let id = self.request(&pred, Request::RemSucc { succ: me }, ctx);
                frame.awaiting = Awaiting::RemSucc { id, pred };
                self.frames.push(frame);
            }
        }
        Ok(())
    }

    fn is_blocked(&self) -> bool {
        !self.frames.is_empty()
    }

    fn stored_values(&self) -> usize {
        self.state.stored_values()
    }
}
