//! Exhaustive interleaving exploration for very small graphs.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashSet};
use std::hash::{Hash, Hasher};

use crate::engine::NodeConfig;
use crate::graph::Topology;
use crate::ids::NodeId;
use crate::node::QpropNode;
use crate::transport::{SchedulerPolicy, SimConfig, SimError, Simulator, TraceEvent, TraceLevel};
use crate::value::{PropagationValue, UpdateFn};

use super::{check_consistency, GlitchChecker, MonotonicityChecker, Verdict, CONSISTENCY, GLITCH_FREEDOM, MONOTONICITY};

#[derive(Debug, Clone)]
pub struct ExhaustiveConfig {
    pub topology: Topology,
    /// Emissions per source.
    pub emissions: u32,
    pub update: UpdateFn,
    /// Give up after visiting this many distinct states.
    pub max_states: usize,
}

impl ExhaustiveConfig {
    pub fn new(topology: Topology, emissions: u32) -> Self {
        ExhaustiveConfig { topology, emissions, update: UpdateFn::Sum, max_states: 2_000_000 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExhaustiveReport {
    pub states: usize,
    /// Quiescent end states reached (after deduplication).
    pub leaves: usize,
    pub truncated: bool,
    /// First violation found, if any.
    pub violation: Option<Verdict>,
}

#[derive(Clone)]
struct Branch {
    sim: Simulator<QpropNode>,
    remaining: BTreeMap<NodeId, u32>,
    mono: MonotonicityChecker,
    glitch: GlitchChecker,
}

enum Choice {
    Deliver(NodeId, NodeId),
    Emit(NodeId),
}

/// Runs every interleaving of message deliveries and source emissions,
/// checking glitch freedom and monotonicity on every update and
/// consistency in every quiescent end state. States are deduplicated on
/// node and channel contents, remaining emissions and monotonicity history.
pub fn explore_interleavings(config: &ExhaustiveConfig) -> Result<ExhaustiveReport, SimError> {
    let topo = &config.topology;
    let procs = topo
        .nodes()
        .iter()
        .map(|n| {
            let preds = topo.preds(n).expect("own node").clone();
            let succs = topo.succs(n).expect("own node").clone();
            QpropNode::new(n.clone(), preds, succs, NodeConfig::new(config.update, 0), false)
        })
        .collect();
    let sim_config = SimConfig { trace_level: TraceLevel::Light, ..SimConfig::default() };
    let mut sim = Simulator::new(procs, topo.clone(), sim_config, SchedulerPolicy::RoundRobin);
    sim.start()?;
    sim.drain_trace();
    let remaining = topo.sources().into_iter().map(|s| (s, config.emissions)).collect();
    let root = Branch { sim, remaining, mono: MonotonicityChecker::default(), glitch: GlitchChecker::new(topo, true) };

    let mut report = ExhaustiveReport::default();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![root];
    while let Some(branch) = stack.pop() {
        let mut h = DefaultHasher::new();
        branch.sim.fingerprint(&mut h);
        branch.remaining.hash(&mut h);
        branch.mono.hash(&mut h);
        if !seen.insert(h.finish()) {
            continue;
        }
        report.states += 1;
        if report.states > config.max_states {
            report.truncated = true;
            break;
        }
        let mut choices: Vec<Choice> = branch.sim.pending_channels().into_iter().map(|(a, b)| Choice::Deliver(a, b)).collect();
        for (s, left) in &branch.remaining {
            if *left > 0 {
                choices.push(Choice::Emit(s.clone()));
            }
        }
        if choices.is_empty() {
            report.leaves += 1;
            let verdict = leaf_consistency(&branch, config.emissions);
            if !verdict.holds {
                report.violation = Some(verdict);
                return Ok(report);
            }
            continue;
        }
        for choice in choices {
            let mut next = branch.clone();
            match &choice {
                Choice::Deliver(a, b) => next.sim.deliver_from(a, b)?,
                Choice::Emit(s) => {
                    let left = next.remaining.get_mut(s).expect("source");
                    let value = (config.emissions - *left + 1) as i64;
                    *left -= 1;
                    next.sim.emit_now(s, value)?;
                }
            }
            let events = next.sim.drain_trace();
            if let Some(v) = check_events(&mut next, events) {
                report.violation = Some(v);
                return Ok(report);
            }
            stack.push(next);
        }
    }
    Ok(report)
}

fn check_events(branch: &mut Branch, events: Vec<TraceEvent>) -> Option<Verdict> {
    for e in events {
        match branch.glitch.observe(&e) {
            Ok(Some(why)) => {
                return Some(Verdict { property: GLITCH_FREEDOM.into(), holds: false, witness: vec![e], detail: Some(why) })
            }
            Ok(None) => {}
            Err(err) => {
                return Some(Verdict { property: GLITCH_FREEDOM.into(), holds: false, witness: vec![e], detail: Some(err.to_string()) })
            }
        }
        if let Some((_, why)) = branch.mono.observe(&e) {
            return Some(Verdict { property: MONOTONICITY.into(), holds: false, witness: vec![e], detail: Some(why) });
        }
    }
    None
}

fn leaf_consistency(branch: &Branch, emissions: u32) -> Verdict {
    let finals: BTreeMap<NodeId, PropagationValue> = branch
        .sim
        .processes()
        .filter_map(|p| p.state().last_prop.clone().map(|v| (p.state().id.clone(), v)))
        .collect();
    let clocks = branch.remaining.keys().map(|s| (s.clone(), emissions as u64)).collect();
    check_consistency(&finals, &clocks, branch.sim.topology(), true, None).unwrap_or_else(|e| Verdict {
        property: CONSISTENCY.into(),
        holds: false,
        witness: Vec::new(),
        detail: Some(e.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;

    #[test]
    fn triangle_with_two_emissions_is_clean() {
        let topo = Topology::validate(
            [nid("A"), nid("B"), nid("C")],
            [(nid("A"), nid("B")), (nid("A"), nid("C")), (nid("B"), nid("C"))],
        )
        .unwrap();
        let report = explore_interleavings(&ExhaustiveConfig::new(topo, 2)).unwrap();
        assert!(report.violation.is_none(), "{:?}", report.violation);
        assert!(!report.truncated);
        assert!(report.leaves >= 1);
        assert!(report.states > 5);
    }
}
