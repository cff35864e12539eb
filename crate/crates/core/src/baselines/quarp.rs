//! Overwrite-buffer propagation: every node keeps only the last value
//! received from each predecessor.
//!
//! Driven step by step with three rules. `src` appends a countered value to
//! a source's output log. `rcv` moves the next unread entry of a
//! predecessor's log into the receiver's slot for it, overwriting. `pub`
//! evaluates once every slot is filled and all slots carrying a source agree
//! on its counter, appending the result to the node's own log.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::Topology;
use crate::ids::NodeId;
use crate::transport::{EventKind, Trace, TraceEvent, UpdateRecord};
use crate::value::{PropagationValue, UpdateFn};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuarpError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} is not a source")]
    NotASource(NodeId),
    #[error("{to} does not depend on {from}")]
    NotAPredecessor { from: NodeId, to: NodeId },
    #[error("nothing left to receive on {from} -> {to}")]
    NothingToReceive { from: NodeId, to: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    value: i64,
    counters: BTreeMap<NodeId, u64>,
}

#[derive(Debug, Clone)]
struct QuarpNode {
    update: UpdateFn,
    slots: BTreeMap<NodeId, Option<Entry>>,
    log: Vec<Entry>,
    /// Per successor, how many log entries it has consumed.
    read: BTreeMap<NodeId, usize>,
    /// A slot changed since the last publish.
    dirty: bool,
    publishes: u64,
}

/// A network of overwrite-buffer nodes with its own event trace.
#[derive(Debug, Clone)]
pub struct QuarpNet {
    nodes: BTreeMap<NodeId, QuarpNode>,
    trace: Trace,
    time: u64,
}

impl QuarpNet {
    pub fn new(topology: &Topology, update_of: impl Fn(&NodeId) -> UpdateFn) -> QuarpNet {
        let nodes = topology
            .nodes()
            .iter()
            .map(|n| {
                let preds = topology.preds(n).expect("own node");
                let succs = topology.succs(n).expect("own node");
                let node = QuarpNode {
                    update: update_of(n),
                    slots: preds.iter().map(|p| (p.clone(), None)).collect(),
                    log: Vec::new(),
                    read: succs.iter().map(|s| (s.clone(), 0)).collect(),
                    dirty: false,
                    publishes: 0,
                };
                (n.clone(), node)
            })
            .collect();
        QuarpNet { nodes, trace: Trace::default(), time: 0 }
    }

    fn record(&mut self, node: &NodeId, kind: EventKind) {
        let seq = self.trace.events.len() as u64;
        self.trace.events.push(TraceEvent { seq, time: self.time, node: node.clone(), kind });
    }

    fn node(&self, n: &NodeId) -> Result<&QuarpNode, QuarpError> {
        self.nodes.get(n).ok_or_else(|| QuarpError::UnknownNode(n.clone()))
    }

    /// The `src` rule. Counters start at 0.
    pub fn src(&mut self, source: &NodeId, value: i64) -> Result<(), QuarpError> {
        self.time += 1;
        let node = self.nodes.get_mut(source).ok_or_else(|| QuarpError::UnknownNode(source.clone()))?;
        if !node.slots.is_empty() {
            return Err(QuarpError::NotASource(source.clone()));
        }
        let counter = node.log.len() as u64;
        node.log.push(Entry { value, counters: BTreeMap::from([(source.clone(), counter)]) });
        let prop = PropagationValue::from_source(source.clone(), value, counter);
        self.record(source, EventKind::SourceEmit { value: prop, requested_at: self.time, cost: 0 });
        Ok(())
    }

    /// The `rcv` rule: `to` takes the next entry of `from`'s log.
    pub fn rcv(&mut self, to: &NodeId, from: &NodeId) -> Result<(), QuarpError> {
        self.time += 1;
        let sender = self.node(from)?;
        let idx = *sender
            .read
            .get(to)
            .ok_or_else(|| QuarpError::NotAPredecessor { from: from.clone(), to: to.clone() })?;
        let entry = sender
            .log
            .get(idx)
            .cloned()
            .ok_or_else(|| QuarpError::NothingToReceive { from: from.clone(), to: to.clone() })?;
        self.nodes.get_mut(from).expect("checked").read.insert(to.clone(), idx + 1);
        let receiver = self.nodes.get_mut(to).ok_or_else(|| QuarpError::UnknownNode(to.clone()))?;
        receiver.slots.insert(from.clone(), Some(entry));
        receiver.dirty = true;
        Ok(())
    }

    /// The `pub` rule. Returns whether `node` published.
    pub fn publish(&mut self, node_id: &NodeId) -> Result<bool, QuarpError> {
        self.time += 1;
        let node = self.node(node_id)?;
        if node.slots.is_empty() || !node.dirty {
            return Ok(false);
        }
        let mut filled = Vec::with_capacity(node.slots.len());
        for (p, slot) in &node.slots {
            match slot {
                Some(e) => filled.push((p, e)),
                None => return Ok(false),
            }
        }
        let mut counters: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (_, e) in &filled {
            for (s, c) in &e.counters {
                if *counters.entry(s.clone()).or_insert(*c) != *c {
                    return Ok(false);
                }
            }
        }
        let values: Vec<i64> = filled.iter().map(|(_, e)| e.value).collect();
        let args: Vec<PropagationValue> = filled
            .iter()
            .map(|(p, e)| PropagationValue::new((*p).clone(), e.value, e.counters.clone(), 0))
            .collect();
        let value = node.update.apply(&values);
        let node = self.nodes.get_mut(node_id).expect("checked");
        node.log.push(Entry { value, counters: counters.clone() });
        node.dirty = false;
        node.publishes += 1;
        let result = PropagationValue::new(node_id.clone(), value, counters, node.log.len() as u64);
        self.record(node_id, EventKind::Update(UpdateRecord { args, result, trigger: None, cost: 0 }));
        Ok(true)
    }

    pub fn publishes(&self, node: &NodeId) -> u64 {
        self.nodes.get(node).map_or(0, |n| n.publishes)
    }

    /// Last published value of each node that published at least once.
    pub fn last_values(&self) -> BTreeMap<NodeId, i64> {
        self.nodes.iter().filter_map(|(id, n)| n.log.last().map(|e| (id.clone(), e.value))).collect()
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;

    fn single_source_diamond() -> Topology {
        Topology::validate(
            [nid("A"), nid("B"), nid("C"), nid("D")],
            [(nid("A"), nid("B")), (nid("A"), nid("C")), (nid("B"), nid("D")), (nid("C"), nid("D"))],
        )
        .unwrap()
    }

    #[test]
    fn single_predecessor_publishes_on_every_receive() {
        let mut net = QuarpNet::new(&single_source_diamond(), |_| UpdateFn::Sum);
        for v in 1..=3 {
            net.src(&nid("A"), v).unwrap();
            net.rcv(&nid("B"), &nid("A")).unwrap();
            assert!(net.publish(&nid("B")).unwrap());
        }
        assert_eq!(net.publishes(&nid("B")), 3);
        assert!(!net.publish(&nid("B")).unwrap());
    }

    #[test]
    fn join_waits_for_all_slots_and_equal_counters() {
        let mut net = QuarpNet::new(&single_source_diamond(), |_| UpdateFn::Sum);
        let (a, b, c, d) = (nid("A"), nid("B"), nid("C"), nid("D"));
        net.src(&a, 1).unwrap();
        net.src(&a, 2).unwrap();
        net.rcv(&c, &a).unwrap();
        net.publish(&c).unwrap();
        net.rcv(&c, &a).unwrap();
        net.publish(&c).unwrap();
        net.rcv(&d, &c).unwrap();
        assert!(!net.publish(&d).unwrap(), "B slot empty");
        net.rcv(&d, &c).unwrap();
        net.rcv(&b, &a).unwrap();
        net.publish(&b).unwrap();
        net.rcv(&d, &b).unwrap();
        assert!(!net.publish(&d).unwrap(), "counters 1 and 0 disagree");
        net.rcv(&b, &a).unwrap();
        net.publish(&b).unwrap();
        net.rcv(&d, &b).unwrap();
        assert!(net.publish(&d).unwrap());
        assert_eq!(net.last_values()[&d], 4);
    }

    #[test]
    fn receive_errors() {
        let mut net = QuarpNet::new(&single_source_diamond(), |_| UpdateFn::Sum);
        assert!(matches!(net.rcv(&nid("B"), &nid("A")), Err(QuarpError::NothingToReceive { .. })));
        assert!(matches!(net.rcv(&nid("D"), &nid("A")), Err(QuarpError::NotAPredecessor { .. })));
        assert!(matches!(net.src(&nid("D"), 1), Err(QuarpError::NotASource(_))));
    }
}
