use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::NodeId;

use super::{OpAction, Process};

/// How the next deliverable message is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    SeededRandom(u64),
    RoundRobin,
    /// Follow an explicit script; round-robin once it is exhausted.
    Scripted,
}

pub(crate) type ChannelKey = (NodeId, NodeId);

#[derive(Debug, Clone)]
pub(crate) enum Chooser {
    Random(ChaCha8Rng),
    RoundRobin(Option<ChannelKey>),
}

impl Chooser {
    pub(crate) fn for_policy(policy: &SchedulerPolicy) -> Chooser {
        match policy {
            SchedulerPolicy::SeededRandom(seed) => Chooser::Random(ChaCha8Rng::seed_from_u64(*seed)),
            SchedulerPolicy::RoundRobin | SchedulerPolicy::Scripted => Chooser::RoundRobin(None),
        }
    }

    /// Picks one of `candidates`, which must be sorted and non-empty.
    pub(crate) fn pick(&mut self, candidates: &[ChannelKey]) -> usize {
        match self {
            Chooser::Random(rng) => rng.gen_range(0..candidates.len()),
            Chooser::RoundRobin(cursor) => {
                let idx = match cursor {
                    Some(last) => candidates.iter().position(|c| c > last).unwrap_or(0),
                    None => 0,
                };
                *cursor = Some(candidates[idx].clone());
                idx
            }
        }
    }
}

/// A single scripted action.
#[derive(Debug, Clone)]
pub enum ScriptStep<P: Process> {
    Emit { node: NodeId, value: i64 },
    Deliver { from: NodeId, to: NodeId },
    Op { description: String, actions: Vec<OpAction<P>> },
    Crash(NodeId),
    Recover(NodeId),
    /// Placeholder for steps that have no counterpart in this engine.
    Nop,
}

#[derive(Debug, Clone)]
pub enum ScriptItem<P: Process> {
    Step(ScriptStep<P>),
    /// `count == None` repeats forever.
    Repeat { count: Option<u64>, body: Arc<Vec<ScriptItem<P>>> },
}

#[derive(Debug, Clone)]
struct Frame<P: Process> {
    items: Arc<Vec<ScriptItem<P>>>,
    idx: usize,
    /// Iterations left including the current one; `None` is unbounded.
    remaining: Option<u64>,
}

/// Lazily walks a script with nested repeat blocks.
#[derive(Debug, Clone)]
pub struct ScriptCursor<P: Process> {
    stack: Vec<Frame<P>>,
}

impl<P: Process> ScriptCursor<P> {
    pub fn new(items: Vec<ScriptItem<P>>) -> Self {
        ScriptCursor { stack: vec![Frame { items: Arc::new(items), idx: 0, remaining: Some(1) }] }
    }

    pub fn is_done(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn next_step(&mut self) -> Option<ScriptStep<P>> {
        loop {
            let top = self.stack.last_mut()?;
            if top.idx < top.items.len() {
                let items = Arc::clone(&top.items);
                top.idx += 1;
                match &items[top.idx - 1] {
                    ScriptItem::Step(s) => return Some(s.clone()),
                    ScriptItem::Repeat { count, body } => {
                        if *count != Some(0) && !body.is_empty() {
                            self.stack.push(Frame { items: Arc::clone(body), idx: 0, remaining: *count });
                        }
                    }
                }
            } else {
                match top.remaining {
                    None => top.idx = 0,
                    Some(n) if n > 1 => {
                        top.remaining = Some(n - 1);
                        top.idx = 0;
                    }
                    Some(_) => {
                        self.stack.pop();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;
    use crate::node::QpropNode;

    type Item = ScriptItem<QpropNode>;

    fn emit(v: i64) -> Item {
        ScriptItem::Step(ScriptStep::Emit { node: nid("A"), value: v })
    }

    fn values(cursor: &mut ScriptCursor<QpropNode>, limit: usize) -> Vec<i64> {
        let mut out = Vec::new();
        while out.len() < limit {
            match cursor.next_step() {
                Some(ScriptStep::Emit { value, .. }) => out.push(value),
                Some(_) => {}
                None => break,
            }
        }
        out
    }

    #[test]
    fn nested_repeats_expand_in_order() {
        let inner = ScriptItem::Repeat { count: Some(2), body: Arc::new(vec![emit(2)]) };
        let outer = ScriptItem::Repeat { count: Some(2), body: Arc::new(vec![emit(1), inner]) };
        let mut c = ScriptCursor::new(vec![emit(0), outer, emit(3)]);
        assert_eq!(values(&mut c, 100), vec![0, 1, 2, 2, 1, 2, 2, 3]);
        assert!(c.is_done());
    }

    #[test]
    fn forever_never_ends() {
        let mut c = ScriptCursor::new(vec![ScriptItem::Repeat { count: None, body: Arc::new(vec![emit(9)]) }]);
        assert_eq!(values(&mut c, 50).len(), 50);
        assert!(!c.is_done());
    }

    #[test]
    fn zero_repeat_is_skipped() {
        let mut c = ScriptCursor::new(vec![ScriptItem::Repeat { count: Some(0), body: Arc::new(vec![emit(1)]) }, emit(2)]);
        assert_eq!(values(&mut c, 10), vec![2]);
    }

    #[test]
    fn round_robin_rotates() {
        let keys: Vec<ChannelKey> = vec![(nid("A"), nid("B")), (nid("A"), nid("C")), (nid("B"), nid("C"))];
        let mut ch = Chooser::for_policy(&SchedulerPolicy::RoundRobin);
        let picks: Vec<usize> = (0..4).map(|_| ch.pick(&keys)).collect();
        assert_eq!(picks, vec![0, 1, 2, 0]);
    }

    #[test]
    fn seeded_choice_is_reproducible() {
        let keys: Vec<ChannelKey> = (0..5).map(|i| (nid("A"), NodeId::new(format!("N{i}")))).collect();
        let run = |seed| {
            let mut ch = Chooser::for_policy(&SchedulerPolicy::SeededRandom(seed));
            (0..20).map(|_| ch.pick(&keys)).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}
