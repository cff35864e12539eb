//! Runs a scenario on one of the engines and collects the outcome.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::{self, CentralNode, QuarpError, QuarpNet};
use crate::engine::NodeConfig;
use crate::graph::Topology;
use crate::ids::NodeId;
use crate::node::QpropNode;
use crate::oracles::{
    check_consistency, check_exploration, check_glitch_freedom, check_monotonicity, detect_stall, OracleError,
    Reachability, StallReport, Verdict,
};
use crate::transport::{
    EventKind, OpAction, Process, RunStatus, SchedulerPolicy, ScriptItem, ScriptStep, SimConfig, SimError,
    Simulator, StepOutcome, Trace, TraceLevel,
};
use crate::value::{PropagationValue, UpdateFn};

use super::generate;
use super::metrics::{self, MetricsReport};
use super::scenario::{
    Engine, FaultAction, Mode, OpSpec, Repeat, Scenario, ScenarioError, SchedulerSpec, ScriptEntry, StepSpec,
};

pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

/// Deliveries without an update that mark a node as a stall suspect.
pub const DEFAULT_STALL_WINDOW: u64 = 10;

/// Rate workloads keep generating until the target is met, up to this many
/// times the requested load.
const GENERATION_CAP: u64 = 10;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("overwrite baseline: {0}")]
    Quarp(#[from] QuarpError),
    #[error("{0}")]
    Unsupported(String),
}

/// Command-line style overrides.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub max_steps: Option<u64>,
    pub mode: Option<Mode>,
    pub trace_level: TraceLevel,
    pub stall_window: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed: None, max_steps: None, mode: None, trace_level: TraceLevel::Full, stall_window: DEFAULT_STALL_WINDOW }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub engine: Engine,
    pub seed: u64,
    pub status: RunStatus,
    /// Filled when the step budget ran out.
    pub stall: Option<StallReport>,
    pub trace: Trace,
    pub metrics: MetricsReport,
    /// Last propagated (or emitted) value per node.
    pub final_values: BTreeMap<NodeId, PropagationValue>,
    /// Highest clock each source emitted; 0 for sources that never did.
    pub source_clocks: BTreeMap<NodeId, u64>,
    /// Per node, source -> predecessors carrying it. Empty for the baselines.
    pub tables: BTreeMap<NodeId, BTreeMap<NodeId, BTreeSet<NodeId>>>,
    pub initial_topology: Topology,
    pub topology: Topology,
    /// Tick at which ops, faults and the workload were anchored.
    pub workload_start: u64,
    /// Completion of the update that met a sinkCount target.
    pub completed_at: Option<u64>,
}

impl RunOutcome {
    pub fn quiescent(&self) -> bool {
        self.status == RunStatus::Quiescent
    }

    /// Checks the recorded run against the oracles. Consistency is only
    /// meaningful at quiescence and exploration only for QPROP engines.
    pub fn verify(&self) -> Result<Vec<Verdict>, OracleError> {
        let mut out = vec![check_glitch_freedom(&self.trace, &self.initial_topology)?, check_monotonicity(&self.trace)?];
        if self.engine == Engine::Quarp {
            return Ok(out);
        }
        if self.quiescent() {
            out.push(check_consistency(&self.final_values, &self.source_clocks, &self.topology, true, Some(&self.trace))?);
        }
        if matches!(self.engine, Engine::Qprop | Engine::QpropD) {
            out.push(check_exploration(&self.topology, &self.tables));
        }
        Ok(out)
    }

    pub fn updates_at(&self, node: &NodeId) -> usize {
        self.trace.updates_at(node).count()
    }
}

/// Glitch freedom and monotonicity of a stored trace. The topology comes
/// from the trace's own initial record.
pub fn verify_trace(trace: &Trace) -> Result<Vec<Verdict>, OracleError> {
    let empty = Topology::default();
    Ok(vec![check_glitch_freedom(trace, &empty)?, check_monotonicity(trace)?])
}

/// Node settings for `node` with the scenario defaults applied.
pub fn node_config(sc: &Scenario, node: &NodeId) -> NodeConfig {
    let spec = sc.node_spec(node);
    NodeConfig {
        update: spec.update.unwrap_or(UpdateFn::Sum),
        init_val: spec.init.unwrap_or(0),
        cost: spec.cost.unwrap_or(0),
        store_bound: sc.store_bound,
        ..NodeConfig::default()
    }
}

/// What the driver needs from a simulated engine beyond [`Process`].
trait Member: Process + Sized {
    fn build(sc: &Scenario, topo: &Topology) -> Vec<Self>;
    fn last_value(&self) -> Option<PropagationValue>;
    fn table(&self) -> Option<BTreeMap<NodeId, BTreeSet<NodeId>>>;
    /// Translates `op`, advancing `planned` (the topology as it will be
    /// once the op has run).
    fn op_actions(op: &OpSpec, sc: &Scenario, planned: &mut Topology) -> Result<Vec<OpAction<Self>>, RunError>;
}

impl Member for QpropNode {
    fn build(sc: &Scenario, topo: &Topology) -> Vec<Self> {
        let dynamic = sc.engine == Engine::QpropD;
        topo.nodes()
            .iter()
            .map(|n| {
                let preds = topo.preds(n).expect("own node").clone();
                let succs = topo.succs(n).expect("own node").clone();
                QpropNode::new(n.clone(), preds, succs, node_config(sc, n), dynamic)
            })
            .collect()
    }

    fn last_value(&self) -> Option<PropagationValue> {
        self.state().last_prop.clone()
    }

    fn table(&self) -> Option<BTreeMap<NodeId, BTreeSet<NodeId>>> {
        Some(self.state().routing.clone())
    }

    fn op_actions(op: &OpSpec, sc: &Scenario, planned: &mut Topology) -> Result<Vec<OpAction<Self>>, RunError> {
        Ok(match op {
            OpSpec::AddDep { node, pred } => {
                let _ = planned.add_edge(pred, node);
                vec![OpAction::AddDependency { node: node.clone(), pred: pred.clone() }]
            }
            OpSpec::RemDep { node, pred } => {
                let _ = planned.remove_edge(pred, node);
                vec![OpAction::RemoveDependency { node: node.clone(), pred: pred.clone() }]
            }
            OpSpec::AddNode { node, preds, succs, spec } => {
                let own = sc.node_spec(node);
                let mut config = node_config(sc, node);
                config.init_val = spec.init.or(own.init).unwrap_or(0);
                config.update = spec.update.or(own.update).unwrap_or(UpdateFn::Sum);
                config.cost = spec.cost.or(own.cost).unwrap_or(0);
                let _ = planned.add_node(node.clone());
                let mut actions = vec![OpAction::Spawn(Box::new(QpropNode::joining(node.clone(), config)))];
                for p in preds {
                    let _ = planned.add_edge(p, node);
                    actions.push(OpAction::AddDependency { node: node.clone(), pred: p.clone() });
                }
                for s in succs {
                    let _ = planned.add_edge(node, s);
                    actions.push(OpAction::AddDependency { node: s.clone(), pred: node.clone() });
                }
                actions
            }
            OpSpec::RemNode { node } => {
                let preds = planned.preds(node).map_err(|e| RunError::Unsupported(e.to_string()))?.clone();
                let succs = planned.succs(node).map_err(|e| RunError::Unsupported(e.to_string()))?.clone();
                let mut actions = Vec::new();
                for s in &succs {
                    actions.push(OpAction::RemoveDependency { node: s.clone(), pred: node.clone() });
                }
                for p in &preds {
                    actions.push(OpAction::RemoveDependency { node: node.clone(), pred: p.clone() });
                }
                actions.push(OpAction::AwaitDrained(node.clone()));
                actions.push(OpAction::Despawn(node.clone()));
                let _ = planned.remove_node(node);
                actions
            }
        })
    }
}

impl Member for CentralNode {
    fn build(sc: &Scenario, topo: &Topology) -> Vec<Self> {
        baselines::central::build(topo, |n| node_config(sc, n))
    }

    fn last_value(&self) -> Option<PropagationValue> {
        self.as_member().map(|m| m.last().clone())
    }

    fn table(&self) -> Option<BTreeMap<NodeId, BTreeSet<NodeId>>> {
        None
    }

    fn op_actions(_: &OpSpec, _: &Scenario, _: &mut Topology) -> Result<Vec<OpAction<Self>>, RunError> {
        Err(RunError::Unsupported("the central baseline has a fixed topology".into()))
    }
}

fn script_items<P: Member>(
    entries: &[ScriptEntry],
    sc: &Scenario,
    planned: &mut Topology,
    next_value: &mut i64,
) -> Result<Vec<ScriptItem<P>>, RunError> {
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        out.push(match entry {
            ScriptEntry::Repeat { repeat, body } => ScriptItem::Repeat {
                count: match repeat {
                    Repeat::Times(n) => Some(*n),
                    Repeat::Forever => None,
                },
                body: Arc::new(script_items(body, sc, planned, next_value)?),
            },
            ScriptEntry::Step(step) => ScriptItem::Step(match step {
                StepSpec::Emit { node, value } => {
                    let value = value.unwrap_or_else(|| {
                        let v = *next_value;
                        *next_value += 1;
                        v
                    });
                    ScriptStep::Emit { node: node.clone(), value }
                }
                StepSpec::Deliver { from, to } => ScriptStep::Deliver { from: from.clone(), to: to.clone() },
                StepSpec::Publish(_) | StepSpec::Nop => ScriptStep::Nop,
                StepSpec::Op(op) => {
                    ScriptStep::Op { description: op.to_string(), actions: P::op_actions(op, sc, planned)? }
                }
                StepSpec::Crash(n) => ScriptStep::Crash(n.clone()),
                StepSpec::Recover(n) => ScriptStep::Recover(n.clone()),
            }),
        });
    }
    Ok(out)
}

/// Loads nothing from disk: validates `sc` and runs it.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let topo = sc.validate()?;
    match sc.engine {
        Engine::Qprop | Engine::QpropD => run_sim::<QpropNode>(sc, opts, topo),
        Engine::Central => run_sim::<CentralNode>(sc, opts, topo),
        Engine::Quarp => run_quarp(sc, opts, topo),
    }
}

/// Sink-count bookkeeping for a rate workload.
struct SinkTarget {
    rate: f64,
    requests: u64,
    sources: Vec<NodeId>,
    reach: Reachability,
    sinks: Vec<NodeId>,
    per_sink: bool,
    /// Per sink, updates needed.
    need: BTreeMap<NodeId, u64>,
    got: BTreeMap<NodeId, u64>,
    generated: u64,
}

impl SinkTarget {
    fn fanout(&self, source: &NodeId) -> impl Iterator<Item = &NodeId> + '_ {
        let source = source.clone();
        self.sinks.iter().filter(move |t| **t != source && self.reach.feeds(&source, t))
    }

    fn units(&self) -> u64 {
        self.need.values().sum()
    }

    /// Aggregate units processed so far, capped per sink when counting per sink.
    fn met(&self) -> bool {
        if self.per_sink {
            self.need.iter().all(|(t, n)| self.got.get(t).copied().unwrap_or(0) >= *n)
        } else {
            self.got.values().sum::<u64>() >= self.units()
        }
    }
}

fn run_sim<P: Member>(sc: &Scenario, opts: &RunOptions, topo: Topology) -> Result<RunOutcome, RunError> {
    let seed = opts.seed.unwrap_or(sc.seed);
    let policy = match &sc.scheduler {
        SchedulerSpec::Scripted => SchedulerPolicy::Scripted,
        SchedulerSpec::RoundRobin => SchedulerPolicy::RoundRobin,
        SchedulerSpec::Random { seed: s } => SchedulerPolicy::SeededRandom(opts.seed.or(*s).unwrap_or(seed)),
    };
    let config = SimConfig {
        latency: sc.latency,
        channel_latency: sc.channel_latency.iter().map(|c| ((c.from.clone(), c.to.clone()), c.ticks)).collect(),
        trace_level: opts.trace_level,
        ..SimConfig::default()
    };
    let mut sim = Simulator::new(P::build(sc, &topo), topo.clone(), config, policy);
    sim.start()?;
    let start = sim.now();

    let mut planned = topo.clone();
    let mut next_value = 1;
    let script = script_items::<P>(&sc.script, sc, &mut planned, &mut next_value)?;
    if !script.is_empty() {
        sim.set_script(script);
    }
    let mut ops = sc.dynamic_ops.clone();
    ops.sort_by_key(|o| o.at);
    for op in &ops {
        let actions = P::op_actions(&op.op, sc, &mut planned)?;
        sim.schedule_op(start + op.at, op.op.to_string(), actions);
    }
    for f in &sc.faults {
        match f.action {
            FaultAction::Crash => sim.schedule_crash(start + f.at, f.node.clone()),
            FaultAction::Recover => sim.schedule_recover(start + f.at, f.node.clone()),
        }
    }

    let budget = opts.max_steps.or(sc.max_steps).unwrap_or(DEFAULT_MAX_STEPS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut completed_at = None;
    let mut target = None;
    let status = match &sc.workload {
        None => sim.run_until_quiescent(budget)?,
        Some(w) => {
            let sources = if w.sources.is_empty() { topo.sources() } else { w.sources.clone() };
            let requests = w.requests();
            let arrivals = generate::arrivals(w.rate, requests, start, &sources, next_value, &mut rng);
            for a in &arrivals {
                sim.schedule_emit(a.tick, a.source.clone(), a.value);
            }
            let reach = Reachability::new(&topo);
            let sinks: Vec<NodeId> = topo.sinks().into_iter().filter(|t| !topo.preds(t).expect("own").is_empty()).collect();
            let mut t = SinkTarget {
                rate: w.rate,
                requests,
                sources,
                reach,
                sinks,
                per_sink: w.per_sink,
                need: BTreeMap::new(),
                got: BTreeMap::new(),
                generated: requests,
            };
            for a in &arrivals {
                let fan: Vec<NodeId> = t.fanout(&a.source).cloned().collect();
                for sink in fan {
                    *t.need.entry(sink).or_insert(0) += 1;
                }
            }
            let status = match opts.mode.unwrap_or(w.mode) {
                Mode::SourceCount => sim.run_until_quiescent(budget)?,
                Mode::SinkCount => {
                    let (status, done) = drive_sink_count(&mut sim, &mut t, start, next_value, budget, &mut rng)?;
                    completed_at = done;
                    status
                }
            };
            target = Some(t);
            status
        }
    };

    let trace = sim.trace().clone();
    let final_topo = sim.topology().clone();
    let mut final_values = BTreeMap::new();
    let mut tables = BTreeMap::new();
    for p in sim.processes() {
        if !final_topo.contains(p.id()) {
            continue;
        }
        if let Some(v) = p.last_value() {
            final_values.insert(p.id().clone(), v);
        }
        if let Some(t) = p.table() {
            tables.insert(p.id().clone(), t);
        }
    }
    let source_clocks = source_clocks(&trace, &final_topo);

    let mut m = MetricsReport { engine: sc.engine.name().into(), seed, ..MetricsReport::default() };
    metrics::from_trace(&trace, &topo, &mut m);
    let mut max = 0;
    let mut means = Vec::new();
    for (_, s) in sim.stored_stats() {
        max = max.max(s.max);
        means.push(s.mean());
    }
    m.stored_values_max = max as u64;
    m.stored_values_mean = metrics::mean(&means);
    if let Some(t) = &target {
        m.load = t.rate;
        let (done, processed) = match completed_at {
            Some(done) => (done, t.requests as f64),
            None => {
                let units = t.units();
                let factor = if t.requests == 0 || units == 0 { 1.0 } else { units as f64 / t.requests as f64 };
                let last = last_sink_completion(&trace, &t.sinks).unwrap_or(start);
                (last, t.got.values().sum::<u64>().max(m.sink_updates) as f64 / factor)
            }
        };
        m.elapsed = done.saturating_sub(start);
        m.throughput = metrics::per_second(processed, m.elapsed);
    }

    let stall = (status == RunStatus::BudgetExhausted).then(|| detect_stall(&trace, opts.stall_window));
    Ok(RunOutcome {
        engine: sc.engine,
        seed,
        status,
        stall,
        trace,
        metrics: m,
        final_values,
        source_clocks,
        tables,
        initial_topology: topo,
        topology: final_topo,
        workload_start: start,
        completed_at,
    })
}

/// Steps until the sinks have processed the target, topping up the load a
/// simulated second at a time while they fall short, then drains.
fn drive_sink_count<P: Member>(
    sim: &mut Simulator<P>,
    t: &mut SinkTarget,
    start: u64,
    first_value: i64,
    budget: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(RunStatus, Option<u64>), RunError> {
    let mut seen = sim.trace().len();
    let mut done = None;
    let cap = t.requests.saturating_mul(GENERATION_CAP);
    let batch = t.rate.ceil().max(1.0) as u64;
    let steps0 = sim.steps();
    loop {
        if sim.steps() - steps0 >= budget {
            return Ok((RunStatus::BudgetExhausted, done));
        }
        let outcome = sim.step()?;
        for e in &sim.trace().events[seen..] {
            if let EventKind::Update(u) = &e.kind {
                if t.sinks.contains(&e.node) {
                    *t.got.entry(e.node.clone()).or_insert(0) += 1;
                    if done.is_none() && t.met() {
                        done = Some(e.time + u.cost);
                    }
                }
            }
        }
        seen = sim.trace().len();
        if done.is_some() {
            let left = budget - (sim.steps() - steps0);
            return Ok((sim.run_until_quiescent(left)?, done));
        }
        let dry = outcome == StepOutcome::Quiescent || sim.pending_emissions() == 0;
        if dry && t.generated < cap && !t.sources.is_empty() && t.units() > 0 {
            let upto = (t.generated + batch).min(cap);
            let extra = generate::arrivals_range(t.rate, t.generated..upto, start, &t.sources, first_value, rng);
            for a in extra {
                sim.schedule_emit(a.tick.max(sim.now()), a.source, a.value);
            }
            t.generated = upto;
        } else if outcome == StepOutcome::Quiescent {
            return Ok((RunStatus::Quiescent, None));
        }
    }
}

fn last_sink_completion(trace: &Trace, sinks: &[NodeId]) -> Option<u64> {
    trace.updates().filter(|(e, _)| sinks.contains(&e.node)).map(|(e, u)| e.time + u.cost).max()
}

/// Highest emitted clock per source of `topo`, 0 when it never emitted.
pub fn source_clocks(trace: &Trace, topo: &Topology) -> BTreeMap<NodeId, u64> {
    let mut out: BTreeMap<NodeId, u64> = topo.sources().into_iter().map(|s| (s, 0)).collect();
    for (e, v, _) in trace.emissions() {
        let c = out.entry(e.node.clone()).or_insert(0);
        *c = (*c).max(v.fclock);
    }
    out
}

fn run_quarp(sc: &Scenario, opts: &RunOptions, topo: Topology) -> Result<RunOutcome, RunError> {
    let seed = opts.seed.unwrap_or(sc.seed);
    let mut net = QuarpNet::new(&topo, |n| node_config(sc, n).update);
    let budget = opts.max_steps.or(sc.max_steps).unwrap_or(DEFAULT_MAX_STEPS);
    let mut steps = 0;
    let mut next_value = 1;
    let exhausted = walk_quarp(&sc.script, &mut net, &mut steps, budget, &mut next_value)?;
    let status = if exhausted { RunStatus::BudgetExhausted } else { RunStatus::Quiescent };
    let trace = net.into_trace();

    let mut final_values = BTreeMap::new();
    for e in trace.iter() {
        match &e.kind {
            EventKind::Update(u) => {
                final_values.insert(e.node.clone(), u.result.clone());
            }
            EventKind::SourceEmit { value, .. } => {
                final_values.insert(e.node.clone(), value.clone());
            }
            _ => {}
        }
    }
    let mut m = MetricsReport { engine: sc.engine.name().into(), seed, ..MetricsReport::default() };
    metrics::from_trace(&trace, &topo, &mut m);
    let stall = exhausted.then(|| detect_stall(&trace, opts.stall_window));
    Ok(RunOutcome {
        engine: sc.engine,
        seed,
        status,
        stall,
        source_clocks: source_clocks(&trace, &topo),
        trace,
        metrics: m,
        final_values,
        tables: BTreeMap::new(),
        initial_topology: topo.clone(),
        topology: topo,
        workload_start: 0,
        completed_at: None,
    })
}

/// Returns true when the budget ran out.
fn walk_quarp(
    entries: &[ScriptEntry],
    net: &mut QuarpNet,
    steps: &mut u64,
    budget: u64,
    next_value: &mut i64,
) -> Result<bool, RunError> {
    for entry in entries {
        match entry {
            ScriptEntry::Step(step) => {
                if *steps >= budget {
                    return Ok(true);
                }
                *steps += 1;
                match step {
                    StepSpec::Emit { node, value } => {
                        let v = value.unwrap_or_else(|| {
                            let v = *next_value;
                            *next_value += 1;
                            v
                        });
                        net.src(node, v)?;
                    }
                    StepSpec::Deliver { from, to } => net.rcv(to, from)?,
                    StepSpec::Publish(node) => {
                        net.publish(node)?;
                    }
                    StepSpec::Nop => {}
                    other => return Err(RunError::Unsupported(format!("overwrite baseline cannot run '{other}'"))),
                }
            }
            ScriptEntry::Repeat { repeat, body } => {
                if body.is_empty() {
                    continue;
                }
                match repeat {
                    Repeat::Times(n) => {
                        for _ in 0..*n {
                            if walk_quarp(body, net, steps, budget, next_value)? {
                                return Ok(true);
                            }
                        }
                    }
                    Repeat::Forever => loop {
                        if walk_quarp(body, net, steps, budget, next_value)? {
                            return Ok(true);
                        }
                    },
                }
            }
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;

    const APPENDIX: &str = "
        topology diamond5
        engine qprop
        scheduler scripted
        node A init 5
        node B init 3
        node C init 8 update sum
        node D init 2 update difference
        node E init 10 update sum
        script
          emit A 7
          deliver A C
          deliver C E
          emit B 0
          deliver B D
          deliver D E
          deliver A D
          deliver D E
          deliver B C
          deliver C E
        end
    ";

    #[test]
    fn scripted_join_updates_once() {
        let sc = Scenario::parse(APPENDIX).unwrap();
        let out = run_scenario(&sc, &RunOptions::default()).unwrap();
        assert!(out.quiescent());
        let e = nid("E");
        let ups: Vec<_> = out.trace.updates_at(&e).collect();
        assert_eq!(ups.len(), 1);
        assert_eq!(ups[0].result.value, 14);
        assert!(out.verify().unwrap().iter().all(|v| v.holds));
    }

    #[test]
    fn sink_count_workload_completes() {
        let sc = Scenario::parse("topology diamond5\nlatency 1\nworkload rate 50 duration 1\n").unwrap();
        let out = run_scenario(&sc, &RunOptions::default()).unwrap();
        assert!(out.quiescent());
        assert!(out.completed_at.is_some());
        assert!(out.metrics.throughput > 0.0);
        assert!(out.verify().unwrap().iter().all(|v| v.holds), "{:?}", out.verify());
    }

    #[test]
    fn central_engine_runs_a_workload() {
        let sc = Scenario::parse("engine central\ntopology diamond5\ndefaults cost 1\nworkload rate 20 duration 1\n").unwrap();
        let out = run_scenario(&sc, &RunOptions::default()).unwrap();
        assert!(out.quiescent());
        assert_eq!(out.metrics.engine, "central");
        assert!(out.verify().unwrap().iter().all(|v| v.holds));
    }

    #[test]
    fn forever_script_exhausts_the_budget() {
        let sc = Scenario::parse(
            "engine quarp\nedges A->B A->C B->D C->D\nscheduler scripted\nmax_steps 50\nscript\nrepeat forever\nsrc A\nrcv B A\npub B\nend\nend\n",
        )
        .unwrap();
        let out = run_scenario(&sc, &RunOptions::default()).unwrap();
        assert_eq!(out.status, RunStatus::BudgetExhausted);
        assert!(out.stall.is_some());
    }
}
