use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("cycle detected: {}", fmt_cycle(.cycle))]
    CycleDetected { cycle: Vec<NodeId> },
    #[error("edge ({from}, {to}) references a node outside the node set")]
    DanglingEdge { from: NodeId, to: NodeId },
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate edge ({from}, {to})")]
    DuplicateEdge { from: NodeId, to: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{0} is not a source node")]
    NotASource(NodeId),
    #[error("no edge ({from}, {to})")]
    MissingEdge { from: NodeId, to: NodeId },
}

fn fmt_cycle(cycle: &[NodeId]) -> String {
    let mut parts: Vec<String> = cycle.iter().map(|n| n.to_string()).collect();
    if let Some(first) = cycle.first() {
        parts.push(first.to_string());
    }
    parts.join(" -> ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Source,
    Intermediate,
    Sink,
}

/// A validated, finite, acyclic dependency graph.
///
/// Isolated nodes have in-degree 0 and are classified as sources.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Topology {
    nodes: BTreeSet<NodeId>,
    succs: BTreeMap<NodeId, BTreeSet<NodeId>>,
    preds: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Topology {
    pub fn validate<N, E>(nodes: N, edges: E) -> Result<Topology, GraphError>
    where
        N: IntoIterator<Item = NodeId>,
        E: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let mut topo = Topology::default();
        for n in nodes {
            if !topo.nodes.insert(n.clone()) {
                return Err(GraphError::DuplicateNode(n));
            }
            topo.succs.insert(n.clone(), BTreeSet::new());
            topo.preds.insert(n, BTreeSet::new());
        }
        for (from, to) in edges {
            if !topo.nodes.contains(&from) || !topo.nodes.contains(&to) {
                return Err(GraphError::DanglingEdge { from, to });
            }
            if from == to {
                return Err(GraphError::CycleDetected { cycle: vec![from] });
            }
            if !topo.succs.get_mut(&from).unwrap().insert(to.clone()) {
                return Err(GraphError::DuplicateEdge { from, to });
            }
            topo.preds.get_mut(&to).unwrap().insert(from);
        }
        if let Some(cycle) = topo.find_cycle() {
            return Err(GraphError::CycleDetected { cycle });
        }
        Ok(topo)
    }

    /// Iterative three-colour DFS; returns the first cycle found in node order.
    fn find_cycle(&self) -> Option<Vec<NodeId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Colour {
            White,
            Grey,
            Black,
        }
        let mut colour: BTreeMap<&NodeId, Colour> =
            self.nodes.iter().map(|n| (n, Colour::White)).collect();
        for root in &self.nodes {
            if colour[root] != Colour::White {
                continue;
            }
            let mut path: Vec<&NodeId> = vec![root];
            let mut stack: Vec<std::collections::btree_set::Iter<'_, NodeId>> =
                vec![self.succs[root].iter()];
            colour.insert(root, Colour::Grey);
            while let Some(iter) = stack.last_mut() {
                match iter.next() {
                    Some(next) => match colour[next] {
                        Colour::White => {
                            colour.insert(next, Colour::Grey);
                            path.push(next);
                            stack.push(self.succs[next].iter());
                        }
                        Colour::Grey => {
                            let start = path.iter().position(|n| *n == next).unwrap();
                            return Some(path[start..].iter().map(|n| (*n).clone()).collect());
                        }
                        Colour::Black => {}
                    },
                    None => {
                        stack.pop();
                        let done = path.pop().unwrap();
                        colour.insert(done, Colour::Black);
                    }
                }
            }
        }
        None
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.succs
            .iter()
            .flat_map(|(from, tos)| tos.iter().map(move |to| (from.clone(), to.clone())))
            .collect()
    }

    pub fn has_edge(&self, from: &NodeId, to: &NodeId) -> bool {
        self.succs.get(from).is_some_and(|s| s.contains(to))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, node: &NodeId) -> Result<(), GraphError> {
        if self.nodes.contains(node) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(node.clone()))
        }
    }

    pub fn preds(&self, node: &NodeId) -> Result<&BTreeSet<NodeId>, GraphError> {
        self.preds.get(node).ok_or_else(|| GraphError::UnknownNode(node.clone()))
    }

    pub fn succs(&self, node: &NodeId) -> Result<&BTreeSet<NodeId>, GraphError> {
        self.succs.get(node).ok_or_else(|| GraphError::UnknownNode(node.clone()))
    }

    /// Source, sink or inner node. A node with neither predecessors nor successors
    /// is reported as a source.
    pub fn classify(&self, node: &NodeId) -> Result<NodeKind, GraphError> {
        let preds = self.preds(node)?;
        let succs = self.succs(node)?;
        Ok(if preds.is_empty() {
            NodeKind::Source
        } else if succs.is_empty() {
            NodeKind::Sink
        } else {
            NodeKind::Intermediate
        })
    }

    pub fn sources(&self) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| self.preds[*n].is_empty()).cloned().collect()
    }

    /// Nodes without successors that are not also sources.
    pub fn sinks(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| self.succs[*n].is_empty() && !self.preds[*n].is_empty())
            .cloned()
            .collect()
    }

    /// True iff a directed path of length >= 1 leads from `x` to `y`.
    pub fn reaches(&self, x: &NodeId, y: &NodeId) -> Result<bool, GraphError> {
        self.check(x)?;
        self.check(y)?;
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&NodeId> = self.succs[x].iter().collect();
        while let Some(n) = queue.pop_front() {
            if n == y {
                return Ok(true);
            }
            if seen.insert(n) {
                queue.extend(self.succs[n].iter());
            }
        }
        Ok(false)
    }

    pub fn descendants(&self, x: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        self.check(x)?;
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&NodeId> = self.succs[x].iter().collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.clone()) {
                queue.extend(self.succs[n].iter());
            }
        }
        Ok(seen)
    }

    pub fn ancestors(&self, x: &NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        self.check(x)?;
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&NodeId> = self.preds[x].iter().collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.clone()) {
                queue.extend(self.preds[n].iter());
            }
        }
        Ok(seen)
    }

    pub fn propagation_path(&self, source: &NodeId) -> Result<PropagationPath<'_>, GraphError> {
        if self.classify(source)? != NodeKind::Source {
            return Err(GraphError::NotASource(source.clone()));
        }
        let mut members = self.descendants(source)?;
        members.insert(source.clone());
        Ok(PropagationPath { topology: self, source: source.clone(), members })
    }

    /// Kahn's algorithm with lexicographic tie-breaking.
    pub fn topological_order(&self) -> Vec<NodeId> {
        let mut indeg: BTreeMap<&NodeId, usize> =
            self.nodes.iter().map(|n| (n, self.preds[n].len())).collect();
        let mut ready: BTreeSet<&NodeId> =
            indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.clone());
            for s in &self.succs[n] {
                let d = indeg.get_mut(s).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(s);
                }
            }
        }
        order
    }

    /// Number of nodes on the longest directed path.
    pub fn depth(&self) -> usize {
        let mut longest: BTreeMap<NodeId, usize> = BTreeMap::new();
        for n in self.topological_order() {
            let d = self.preds[&n].iter().map(|p| longest[p]).max().unwrap_or(0) + 1;
            longest.insert(n, d);
        }
        longest.values().copied().max().unwrap_or(0)
    }

    pub fn add_node(&mut self, node: NodeId) -> Result<(), GraphError> {
        if self.nodes.contains(&node) {
            return Err(GraphError::DuplicateNode(node));
        }
        self.nodes.insert(node.clone());
        self.succs.insert(node.clone(), BTreeSet::new());
        self.preds.insert(node, BTreeSet::new());
        Ok(())
    }

    /// Removes a node together with all incident edges.
    pub fn remove_node(&mut self, node: &NodeId) -> Result<(), GraphError> {
        self.check(node)?;
        for s in self.succs.remove(node).unwrap() {
            self.preds.get_mut(&s).unwrap().remove(node);
        }
        for p in self.preds.remove(node).unwrap() {
            self.succs.get_mut(&p).unwrap().remove(node);
        }
        self.nodes.remove(node);
        Ok(())
    }

    /// Adds an edge, rejecting it if it would close a cycle.
    pub fn add_edge(&mut self, from: &NodeId, to: &NodeId) -> Result<(), GraphError> {
        self.check(from)?;
        self.check(to)?;
        if from == to || self.reaches(to, from)? {
            let mut cycle = vec![from.clone()];
            if from != to {
                cycle.extend(self.path(to, from).unwrap_or_default().into_iter().take_while(|n| n != from));
            }
            return Err(GraphError::CycleDetected { cycle });
        }
        if !self.succs.get_mut(from).unwrap().insert(to.clone()) {
            return Err(GraphError::DuplicateEdge { from: from.clone(), to: to.clone() });
        }
        self.preds.get_mut(to).unwrap().insert(from.clone());
        Ok(())
    }

    pub fn remove_edge(&mut self, from: &NodeId, to: &NodeId) -> Result<(), GraphError> {
        self.check(from)?;
        self.check(to)?;
        if !self.succs.get_mut(from).unwrap().remove(to) {
            return Err(GraphError::MissingEdge { from: from.clone(), to: to.clone() });
        }
        self.preds.get_mut(to).unwrap().remove(from);
        Ok(())
    }

    /// Some directed path from `x` to `y`, both ends included.
    fn path(&self, x: &NodeId, y: &NodeId) -> Option<Vec<NodeId>> {
        let mut parent: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
        let mut queue: VecDeque<&NodeId> = VecDeque::from([x]);
        let mut seen: BTreeSet<&NodeId> = BTreeSet::from([x]);
        while let Some(n) = queue.pop_front() {
            if n == y {
                let mut out = vec![n.clone()];
                let mut cur = n;
                while let Some(p) = parent.get(cur) {
                    out.push((*p).clone());
                    cur = p;
                }
                out.reverse();
                return Some(out);
            }
            for s in &self.succs[n] {
                if seen.insert(s) {
                    parent.insert(s, n);
                    queue.push_back(s);
                }
            }
        }
        None
    }
}

/// A source plus every node it reaches, ordered by reachability.
#[derive(Debug, Clone)]
pub struct PropagationPath<'a> {
    topology: &'a Topology,
    pub source: NodeId,
    pub members: BTreeSet<NodeId>,
}

impl PropagationPath<'_> {
    pub fn contains(&self, node: &NodeId) -> bool {
        self.members.contains(node)
    }

    /// Partial order: `a` precedes `b` iff `a` reaches `b`.
    pub fn precedes(&self, a: &NodeId, b: &NodeId) -> bool {
        self.contains(a) && self.contains(b) && self.topology.reaches(a, b).unwrap_or(false)
    }
}
