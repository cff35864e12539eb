//! Topology, workload and dynamic-operation generators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphError, Topology};
use crate::ids::NodeId;
use crate::transport::TICKS_PER_SECOND;

use super::scenario::OpSpec;

fn ids(names: &[&str]) -> Vec<NodeId> {
    names.iter().map(|n| NodeId::new(n)).collect()
}

fn edge(a: &str, b: &str) -> (NodeId, NodeId) {
    (NodeId::new(a), NodeId::new(b))
}

/// Two sources `A`, `B` feeding `C` and `D`, which both feed the sink `E`.
pub fn diamond5() -> Topology {
    Topology::validate(
        ids(&["A", "B", "C", "D", "E"]),
        [edge("A", "C"), edge("B", "C"), edge("A", "D"), edge("B", "D"), edge("C", "E"), edge("D", "E")],
    )
    .expect("diamond5 is acyclic")
}

/// Source `S` fanning out to `M0..M{n-1}`, all joined by the sink `T`.
pub fn fan(n: usize) -> Topology {
    let mut nodes = vec![NodeId::new("S"), NodeId::new("T")];
    let mut edges = Vec::new();
    for i in 0..n {
        let m = format!("M{i}");
        nodes.push(NodeId::new(&m));
        edges.push(edge("S", &m));
        edges.push(edge(&m, "T"));
    }
    Topology::validate(nodes, edges).expect("fan is acyclic")
}

pub fn layered_name(level: usize, index: usize) -> NodeId {
    NodeId::new(format!("L{level}_{index}"))
}

/// `levels` rows of `width` nodes. Node `(l, i)` depends on `(l-1, i)` and
/// `(l-1, (i+1) mod width)`; row 0 holds the sources.
pub fn layered(levels: usize, width: usize) -> Topology {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for l in 0..levels {
        for i in 0..width {
            nodes.push(layered_name(l, i));
            if l > 0 {
                edges.push((layered_name(l - 1, i), layered_name(l, i)));
                let j = (i + 1) % width;
                if j != i {
                    edges.push((layered_name(l - 1, j), layered_name(l, i)));
                }
            }
        }
    }
    Topology::validate(nodes, edges).expect("layered graph is acyclic")
}

/// Random DAG over `N0..N{n-1}`: each forward pair `i < j` is an edge with
/// probability `density`, keeping in-degree at most 3.
pub fn random_dag(n: usize, density: f64, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("N{i}"))).collect();
    let mut edges = Vec::new();
    for j in 0..n {
        let mut indeg = 0;
        for i in 0..j {
            if indeg < 3 && rng.gen_bool(density.clamp(0.0, 1.0)) {
                edges.push((nodes[i].clone(), nodes[j].clone()));
                indeg += 1;
            }
        }
    }
    Topology::validate(nodes, edges).expect("forward edges are acyclic")
}

/// One external request: ask `source` to emit `value` at `tick`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arrival {
    pub tick: u64,
    pub source: NodeId,
    pub value: i64,
}

/// Tick of request `index` in a stream starting at `start` with `rate`
/// requests per simulated second.
pub fn arrival_tick(start: u64, index: u64, rate: f64) -> u64 {
    start + (index as f64 * TICKS_PER_SECOND as f64 / rate).floor() as u64
}

/// `count` requests at `rate` per simulated second starting at `start`;
/// request `i` arrives at `start + floor(i * 1000 / rate)` at a source
/// drawn by `rng`. Payloads count up from `first_value`.
pub fn arrivals(rate: f64, count: u64, start: u64, sources: &[NodeId], first_value: i64, rng: &mut ChaCha8Rng) -> Vec<Arrival> {
    arrivals_range(rate, 0..count, start, sources, first_value, rng)
}

/// Requests `indices` of the stream described by [`arrivals`].
pub fn arrivals_range(
    rate: f64,
    indices: std::ops::Range<u64>,
    start: u64,
    sources: &[NodeId],
    first_value: i64,
    rng: &mut ChaCha8Rng,
) -> Vec<Arrival> {
    if sources.is_empty() || rate <= 0.0 {
        return Vec::new();
    }
    indices
        .map(|i| Arrival {
            tick: arrival_tick(start, i, rate),
            source: sources.choose(rng).expect("non-empty").clone(),
            value: first_value + i as i64,
        })
        .collect()
}

/// `count` dependency operations spread evenly over `[start, start + span)`,
/// alternating an addition and the removal that undoes it. The dependent node
/// is never a source and the new predecessor is never one of its
/// descendants or existing predecessors.
pub fn churn_ops(topology: &Topology, count: usize, start: u64, span: u64, rng: &mut ChaCha8Rng) -> Result<Vec<(u64, OpSpec)>, GraphError> {
    let mut candidates = Vec::new();
    for node in topology.nodes() {
        if topology.preds(node)?.is_empty() {
            continue;
        }
        let below = topology.descendants(node)?;
        for pred in topology.nodes() {
            if pred != node && !below.contains(pred) && !topology.has_edge(pred, node) {
                candidates.push((node.clone(), pred.clone()));
            }
        }
    }
    let mut ops = Vec::with_capacity(count);
    if candidates.is_empty() {
        return Ok(ops);
    }
    let mut pair = None;
    for k in 0..count {
        let at = start + (k as u64 + 1) * span / (count as u64 + 1);
        if k % 2 == 0 {
            let (node, pred) = candidates.choose(rng).expect("non-empty").clone();
            ops.push((at, OpSpec::AddDep { node: node.clone(), pred: pred.clone() }));
            pair = Some((node, pred));
        } else if let Some((node, pred)) = pair.take() {
            ops.push((at, OpSpec::RemDep { node, pred }));
        }
    }
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;
    use crate::ids::nid;

    #[test]
    fn diamond_shape() {
        let t = diamond5();
        assert_eq!(t.sources(), vec![nid("A"), nid("B")]);
        assert_eq!(t.sinks(), vec![nid("E")]);
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn fan_shape() {
        let t = fan(4);
        assert_eq!(t.len(), 6);
        assert_eq!(t.preds(&nid("T")).unwrap().len(), 4);
        assert_eq!(t.classify(&nid("M2")).unwrap(), NodeKind::Intermediate);
    }

    #[test]
    fn layered_shape() {
        let t = layered(4, 15);
        assert_eq!(t.len(), 60);
        assert_eq!(t.sources().len(), 15);
        assert_eq!(t.sinks().len(), 15);
        assert_eq!(t.depth(), 4);
        let preds = t.preds(&layered_name(1, 14)).unwrap();
        assert!(preds.contains(&layered_name(0, 14)) && preds.contains(&layered_name(0, 0)));
        assert_eq!(layered(2, 1).edges().len(), 1);
    }

    #[test]
    fn random_dag_is_reproducible_and_bounded() {
        let a = random_dag(12, 0.5, 3);
        assert_eq!(a, random_dag(12, 0.5, 3));
        for n in a.nodes() {
            assert!(a.preds(n).unwrap().len() <= 3);
        }
    }

    #[test]
    fn arrivals_follow_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = arrivals(300.0, 4, 10, &[nid("A"), nid("B")], 1, &mut rng);
        let ticks: Vec<u64> = a.iter().map(|x| x.tick).collect();
        assert_eq!(ticks, vec![10, 13, 16, 20]);
        assert_eq!(a[3].value, 4);
    }

    #[test]
    fn churn_pairs_undo_each_other() {
        let t = diamond5();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ops = churn_ops(&t, 4, 0, 1000, &mut rng).unwrap();
        assert_eq!(ops.len(), 4);
        assert_eq!(ops.iter().map(|o| o.0).collect::<Vec<_>>(), vec![200, 400, 600, 800]);
        match (&ops[0].1, &ops[1].1) {
            (OpSpec::AddDep { node: a, pred: p }, OpSpec::RemDep { node: b, pred: q }) => {
                assert_eq!((a, p), (b, q));
                assert!(!t.preds(a).unwrap().is_empty());
                assert!(!t.has_edge(p, a));
                assert!(!t.reaches(a, p).unwrap());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
