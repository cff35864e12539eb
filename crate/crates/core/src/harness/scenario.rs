//! Scenario files: a line-oriented text format and its JSON equivalent.
//! The grammar is documented in `docs/scenario-format.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, Topology};
use crate::ids::NodeId;
use crate::value::UpdateFn;

use super::generate;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
    #[error("topology: {0}")]
    Topology(#[from] GraphError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Static QPROP: no topology changes after exploration.
    #[default]
    Qprop,
    QpropD,
    Central,
    Quarp,
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Qprop => "qprop",
            Engine::QpropD => "qprop_d",
            Engine::Central => "central",
            Engine::Quarp => "quarp",
        }
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "qprop" => Ok(Engine::Qprop),
            "qprop_d" | "qpropd" | "qprop-d" => Ok(Engine::QpropD),
            "central" => Ok(Engine::Central),
            "quarp" => Ok(Engine::Quarp),
            other => Err(format!("unknown engine '{other}'")),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    Inline { nodes: Vec<NodeId>, edges: Vec<(NodeId, NodeId)> },
    Diamond5,
    Fan { n: usize },
    Layered { levels: usize, width: usize },
    RandomDag { n: usize, density: f64, seed: u64 },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::Inline { nodes: Vec::new(), edges: Vec::new() }
    }
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, GraphError> {
        Ok(match self {
            TopologySpec::Inline { nodes, edges } => Topology::validate(nodes.iter().cloned(), edges.iter().cloned())?,
            TopologySpec::Diamond5 => generate::diamond5(),
            TopologySpec::Fan { n } => generate::fan(*n),
            TopologySpec::Layered { levels, width } => generate::layered(*levels, *width),
            TopologySpec::RandomDag { n, density, seed } => generate::random_dag(*n, *density, *seed),
        })
    }
}

/// Per-node settings; unset fields fall back to the scenario defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update: Option<UpdateFn>,
    /// Processing ticks per update or emission (`busywork(ticks)`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SchedulerSpec {
    Scripted,
    #[default]
    RoundRobin,
    /// Seeded random interleaving; the seed defaults to the scenario seed.
    Random {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

/// Completion rule for rate workloads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Run until the sinks have processed the generated load.
    #[default]
    #[serde(rename = "sinkCount")]
    SinkCount,
    /// Stop generating once the sources produced the load; run to quiescence.
    #[serde(rename = "sourceCount")]
    SourceCount,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sinkCount" | "sink_count" | "sink" => Ok(Mode::SinkCount),
            "sourceCount" | "source_count" | "source" => Ok(Mode::SourceCount),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    /// Requests per simulated second, across all sources.
    pub rate: f64,
    /// Seconds of load; `rate * duration` requests make up the target.
    pub duration: f64,
    #[serde(default)]
    pub mode: Mode,
    /// Overrides `rate * duration` as the processed-load target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<u64>,
    /// Sources to draw from; all sources when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<NodeId>,
    /// Count completion per sink instead of in aggregate.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub per_sink: bool,
}

impl Workload {
    pub fn requests(&self) -> u64 {
        self.target.unwrap_or_else(|| (self.rate * self.duration).round() as u64)
    }
}

/// A topology operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpSpec {
    AddDep { node: NodeId, pred: NodeId },
    RemDep { node: NodeId, pred: NodeId },
    AddNode { node: NodeId, preds: Vec<NodeId>, succs: Vec<NodeId>, spec: NodeSpec },
    RemNode { node: NodeId },
}

/// One scripted step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepSpec {
    /// `emit A 7`, or `src A` with an automatic payload.
    Emit { node: NodeId, value: Option<i64> },
    /// `deliver FROM TO`, or `rcv TO FROM`.
    Deliver { from: NodeId, to: NodeId },
    /// `pub X`: an explicit publish attempt (meaningful for the overwrite baseline only).
    Publish(NodeId),
    Op(OpSpec),
    Crash(NodeId),
    Recover(NodeId),
    Nop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repeat {
    Times(u64),
    Forever,
}

impl Serialize for Repeat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Repeat::Times(n) => s.serialize_u64(*n),
            Repeat::Forever => s.serialize_str("forever"),
        }
    }
}

impl<'de> Deserialize<'de> for Repeat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Repeat::Times(n)),
            Raw::S(s) if s == "forever" => Ok(Repeat::Forever),
            Raw::S(s) => Err(serde::de::Error::custom(format!("bad repeat count '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Repeat { repeat: Repeat, body: Vec<ScriptEntry> },
    Step(StepSpec),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedOp {
    pub at: u64,
    pub op: OpSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    Crash,
    Recover,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub at: u64,
    pub action: FaultAction,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLatency {
    pub from: NodeId,
    pub to: NodeId,
    pub ticks: u64,
}

/// A complete simulation setup. Timestamps of ops, faults and workload are
/// ticks after the startup phases have quiesced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub engine: Engine,
    pub topology: TopologySpec,
    #[serde(default)]
    pub defaults: NodeSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nodes: BTreeMap<NodeId, NodeSpec>,
    #[serde(default)]
    pub latency: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channel_latency: Vec<ChannelLatency>,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<Workload>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dynamic_ops: Vec<TimedOp>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<Fault>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_bound: Option<usize>,
}

// ---- line syntax for steps and ops, shared by both formats ----

fn parse_int<T: FromStr>(tok: Option<&&str>, what: &str) -> Result<T, String> {
    let tok = tok.ok_or_else(|| format!("missing {what}"))?;
    tok.parse().map_err(|_| format!("bad {what} '{tok}'"))
}

fn parse_id(tok: Option<&&str>, what: &str) -> Result<NodeId, String> {
    tok.map(|t| NodeId::new(*t)).ok_or_else(|| format!("missing {what}"))
}

fn parse_update(tok: Option<&&str>) -> Result<UpdateFn, String> {
    let name = tok.ok_or("missing update function")?;
    UpdateFn::parse(name).ok_or_else(|| format!("unknown update function '{name}'"))
}

/// Parses `key value` pairs such as `init 5 update sum cost 3`. A
/// `busywork N` pair sets both the function and the cost.
fn parse_node_spec(toks: &[&str]) -> Result<NodeSpec, String> {
    let mut spec = NodeSpec::default();
    let mut i = 0;
    while i < toks.len() {
        match toks[i] {
            "init" => spec.init = Some(parse_int(toks.get(i + 1), "init value")?),
            "update" => {
                let name = toks.get(i + 1);
                if name == Some(&"busywork") {
                    spec.update = Some(UpdateFn::Sum);
                    spec.cost = Some(parse_int(toks.get(i + 2), "busywork ticks")?);
                    i += 1;
                } else {
                    spec.update = Some(parse_update(name)?);
                }
            }
            "busywork" => {
                spec.update.get_or_insert(UpdateFn::Sum);
                spec.cost = Some(parse_int(toks.get(i + 1), "busywork ticks")?);
            }
            "cost" => spec.cost = Some(parse_int(toks.get(i + 1), "cost")?),
            other => return Err(format!("unknown node setting '{other}'")),
        }
        i += 2;
    }
    Ok(spec)
}

fn fmt_node_spec(spec: &NodeSpec) -> String {
    let mut parts = Vec::new();
    if let Some(v) = spec.init {
        parts.push(format!("init {v}"));
    }
    if let Some(u) = spec.update {
        parts.push(format!("update {}", u.name()));
    }
    if let Some(c) = spec.cost {
        parts.push(format!("cost {c}"));
    }
    parts.join(" ")
}

impl FromStr for OpSpec {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("add_dep") => Ok(OpSpec::AddDep { node: parse_id(toks.get(1), "node")?, pred: parse_id(toks.get(2), "pred")? }),
            Some("rem_dep") => Ok(OpSpec::RemDep { node: parse_id(toks.get(1), "node")?, pred: parse_id(toks.get(2), "pred")? }),
            Some("rem_node") => Ok(OpSpec::RemNode { node: parse_id(toks.get(1), "node")? }),
            Some("add_node") => {
                let node = parse_id(toks.get(1), "node")?;
                let (mut preds, mut succs) = (Vec::new(), Vec::new());
                let mut rest = Vec::new();
                let mut target: Option<&mut Vec<NodeId>> = None;
                let mut i = 2;
                while i < toks.len() {
                    match toks[i] {
                        "preds" => target = Some(&mut preds),
                        "succs" => target = Some(&mut succs),
                        "init" | "update" | "cost" | "busywork" => {
                            rest.extend_from_slice(&toks[i..]);
                            break;
                        }
                        name => match target.as_mut() {
                            Some(list) => list.push(NodeId::new(name)),
                            None => return Err(format!("expected 'preds' or 'succs', found '{name}'")),
                        },
                    }
                    i += 1;
                }
                Ok(OpSpec::AddNode { node, preds, succs, spec: parse_node_spec(&rest)? })
            }
            Some(other) => Err(format!("unknown operation '{other}'")),
            None => Err("missing operation".into()),
        }
    }
}

impl fmt::Display for OpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpSpec::AddDep { node, pred } => write!(f, "add_dep {node} {pred}"),
            OpSpec::RemDep { node, pred } => write!(f, "rem_dep {node} {pred}"),
            OpSpec::RemNode { node } => write!(f, "rem_node {node}"),
            OpSpec::AddNode { node, preds, succs, spec } => {
                write!(f, "add_node {node}")?;
                if !preds.is_empty() {
                    write!(f, " preds {}", join(preds))?;
                }
                if !succs.is_empty() {
                    write!(f, " succs {}", join(succs))?;
                }
                let extra = fmt_node_spec(spec);
                if !extra.is_empty() {
                    write!(f, " {extra}")?;
                }
                Ok(())
            }
        }
    }
}

fn join(ids: &[NodeId]) -> String {
    ids.iter().map(|n| n.as_str()).collect::<Vec<_>>().join(" ")
}

impl FromStr for StepSpec {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let arity = |n: usize| -> Result<(), String> {
            if toks.len() == n {
                Ok(())
            } else {
                Err(format!("'{}' takes {} argument(s)", toks[0], n - 1))
            }
        };
        match toks.first().copied() {
            Some("emit") | Some("src") => {
                if toks.len() > 3 {
                    return Err(format!("'{}' takes a node and an optional value", toks[0]));
                }
                let value = match toks.get(2) {
                    Some(_) => Some(parse_int(toks.get(2), "value")?),
                    None => None,
                };
                Ok(StepSpec::Emit { node: parse_id(toks.get(1), "node")?, value })
            }
            Some("deliver") => {
                arity(3)?;
                Ok(StepSpec::Deliver { from: parse_id(toks.get(1), "sender")?, to: parse_id(toks.get(2), "receiver")? })
            }
            Some("rcv") => {
                arity(3)?;
                Ok(StepSpec::Deliver { to: parse_id(toks.get(1), "receiver")?, from: parse_id(toks.get(2), "sender")? })
            }
            Some("pub") => {
                arity(2)?;
                Ok(StepSpec::Publish(parse_id(toks.get(1), "node")?))
            }
            Some("crash") => {
                arity(2)?;
                Ok(StepSpec::Crash(parse_id(toks.get(1), "node")?))
            }
            Some("recover") => {
                arity(2)?;
                Ok(StepSpec::Recover(parse_id(toks.get(1), "node")?))
            }
            Some("nop") => {
                arity(1)?;
                Ok(StepSpec::Nop)
            }
            Some("op") => Ok(StepSpec::Op(toks[1..].join(" ").parse()?)),
            Some(other) => Err(format!("unknown step '{other}'")),
            None => Err("empty step".into()),
        }
    }
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSpec::Emit { node, value: Some(v) } => write!(f, "emit {node} {v}"),
            StepSpec::Emit { node, value: None } => write!(f, "emit {node}"),
            StepSpec::Deliver { from, to } => write!(f, "deliver {from} {to}"),
            StepSpec::Publish(n) => write!(f, "pub {n}"),
            StepSpec::Op(op) => write!(f, "op {op}"),
            StepSpec::Crash(n) => write!(f, "crash {n}"),
            StepSpec::Recover(n) => write!(f, "recover {n}"),
            StepSpec::Nop => f.write_str("nop"),
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(OpSpec);
string_serde!(StepSpec);

// ---- text format ----

struct Lines<'a> {
    items: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .filter_map(|(i, raw)| {
                let line = raw.split('#').next().unwrap_or("");
                let toks: Vec<&str> = line.split_whitespace().collect();
                (!toks.is_empty()).then_some((i + 1, toks))
            })
            .collect();
        Lines { items, pos: 0 }
    }

    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        let item = self.items.get(self.pos).cloned();
        self.pos += 1;
        item
    }
}

fn perr(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, message: message.into() }
}

fn parse_block(lines: &mut Lines<'_>, opened_at: usize) -> Result<Vec<ScriptEntry>, ScenarioError> {
    let mut out = Vec::new();
    while let Some((ln, toks)) = lines.next() {
        match toks[0] {
            "end" => return Ok(out),
            "repeat" => {
                let repeat = match toks.get(1).copied() {
                    Some("forever") => Repeat::Forever,
                    Some(n) => Repeat::Times(n.parse().map_err(|_| perr(ln, format!("bad repeat count '{n}'")))?),
                    None => return Err(perr(ln, "repeat needs a count or 'forever'")),
                };
                let body = parse_block(lines, ln)?;
                out.push(ScriptEntry::Repeat { repeat, body });
            }
            _ => out.push(ScriptEntry::Step(toks.join(" ").parse().map_err(|e: String| perr(ln, e))?)),
        }
    }
    Err(perr(opened_at, "block is never closed with 'end'"))
}

impl Scenario {
    /// Parses the text format.
    pub fn from_text(text: &str) -> Result<Scenario, ScenarioError> {
        let mut sc = Scenario::default();
        let mut inline_nodes: Vec<NodeId> = Vec::new();
        let mut inline_edges: Vec<(NodeId, NodeId)> = Vec::new();
        let mut generated: Option<TopologySpec> = None;
        let mut lines = Lines::new(text);
        while let Some((ln, toks)) = lines.next() {
            let e = |m: String| perr(ln, m);
            let rest = &toks[1..];
            match toks[0] {
                "name" => sc.name = rest.join(" "),
                "engine" => sc.engine = rest.first().ok_or_else(|| e("missing engine".into()))?.parse().map_err(e)?,
                "topology" => {
                    let kind = rest.first().copied().unwrap_or("");
                    generated = Some(match kind {
                        "diamond5" => TopologySpec::Diamond5,
                        "fan" => TopologySpec::Fan { n: parse_int(rest.get(1), "fan width").map_err(e)? },
                        "layered" => TopologySpec::Layered {
                            levels: parse_int(rest.get(1), "levels").map_err(e)?,
                            width: parse_int(rest.get(2), "width").map_err(e)?,
                        },
                        "random" | "random_dag" => TopologySpec::RandomDag {
                            n: parse_int(rest.get(1), "node count").map_err(e)?,
                            density: parse_int(rest.get(2), "density").map_err(e)?,
                            seed: parse_int(rest.get(3), "seed").map_err(e)?,
                        },
                        other => return Err(e(format!("unknown topology kind '{other}'"))),
                    });
                }
                "nodes" => inline_nodes.extend(rest.iter().map(NodeId::new)),
                "edge" => {
                    if rest.len() != 2 {
                        return Err(e("edge takes two nodes".into()));
                    }
                    inline_edges.push((NodeId::new(rest[0]), NodeId::new(rest[1])));
                }
                "edges" => {
                    for pair in rest {
                        let (a, b) = pair.split_once("->").ok_or_else(|| e(format!("expected FROM->TO, found '{pair}'")))?;
                        inline_edges.push((NodeId::new(a), NodeId::new(b)));
                    }
                }
                "node" => {
                    let id = parse_id(rest.first(), "node").map_err(e)?;
                    let spec = parse_node_spec(&rest[1..]).map_err(e)?;
                    let entry = sc.nodes.entry(id).or_default();
                    entry.init = spec.init.or(entry.init);
                    entry.update = spec.update.or(entry.update);
                    entry.cost = spec.cost.or(entry.cost);
                }
                "defaults" | "default" => sc.defaults = parse_node_spec(rest).map_err(e)?,
                "latency" => match rest.len() {
                    1 => sc.latency = parse_int(rest.first(), "latency").map_err(e)?,
                    3 => sc.channel_latency.push(ChannelLatency {
                        from: NodeId::new(rest[0]),
                        to: NodeId::new(rest[1]),
                        ticks: parse_int(rest.get(2), "latency").map_err(e)?,
                    }),
                    _ => return Err(e("latency takes TICKS or FROM TO TICKS".into())),
                },
                "scheduler" => {
                    sc.scheduler = match rest.first().copied() {
                        Some("scripted") => SchedulerSpec::Scripted,
                        Some("round_robin") | Some("roundrobin") => SchedulerSpec::RoundRobin,
                        Some("random") => SchedulerSpec::Random {
                            seed: match rest.get(1) {
                                Some(_) => Some(parse_int(rest.get(1), "seed").map_err(e)?),
                                None => None,
                            },
                        },
                        other => return Err(e(format!("unknown scheduler '{}'", other.unwrap_or("")))),
                    }
                }
                "seed" => sc.seed = parse_int(rest.first(), "seed").map_err(e)?,
                "max_steps" => sc.max_steps = Some(parse_int(rest.first(), "step budget").map_err(e)?),
                "store_bound" => sc.store_bound = Some(parse_int(rest.first(), "store bound").map_err(e)?),
                "workload" => sc.workload = Some(parse_workload(rest).map_err(e)?),
                "at" => {
                    let at: u64 = parse_int(rest.first(), "time").map_err(e)?;
                    match rest.get(1).copied() {
                        Some("op") => sc.dynamic_ops.push(TimedOp { at, op: rest[2..].join(" ").parse().map_err(e)? }),
                        Some("crash") | Some("recover") => {
                            let action = if rest[1] == "crash" { FaultAction::Crash } else { FaultAction::Recover };
                            if rest.len() != 3 {
                                return Err(e(format!("{} takes one node", rest[1])));
                            }
                            sc.faults.push(Fault { at, action, node: NodeId::new(rest[2]) });
                        }
                        _ => return Err(e("expected 'at TICK op ...', 'at TICK crash N' or 'at TICK recover N'".into())),
                    }
                }
                "script" => {
                    let body = parse_block(&mut lines, ln)?;
                    sc.script.extend(body);
                }
                other => return Err(e(format!("unknown directive '{other}'"))),
            }
        }
        sc.topology = match generated {
            Some(g) if inline_nodes.is_empty() && inline_edges.is_empty() => g,
            Some(_) => return Err(invalid("topology", "both a generated topology and inline nodes/edges given")),
            None => {
                // Nodes named only by edges are declared implicitly.
                for (a, b) in &inline_edges {
                    for n in [a, b] {
                        if !inline_nodes.contains(n) {
                            inline_nodes.push(n.clone());
                        }
                    }
                }
                TopologySpec::Inline { nodes: inline_nodes, edges: inline_edges }
            }
        };
        Ok(sc)
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    /// Reads either format; JSON is recognised by a leading `{`.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        if text.trim_start().starts_with('{') {
            Scenario::from_json(text)
        } else {
            Scenario::from_text(text)
        }
    }

    /// Loads and validates a scenario file.
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let sc = Scenario::parse(&text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn node_spec(&self, node: &NodeId) -> NodeSpec {
        let own = self.nodes.get(node).cloned().unwrap_or_default();
        NodeSpec {
            init: own.init.or(self.defaults.init),
            update: own.update.or(self.defaults.update),
            cost: own.cost.or(self.defaults.cost),
        }
    }

    fn has_script_ops(&self) -> bool {
        fn walk(entries: &[ScriptEntry]) -> bool {
            entries.iter().any(|e| match e {
                ScriptEntry::Step(StepSpec::Op(_)) => true,
                ScriptEntry::Step(_) => false,
                ScriptEntry::Repeat { body, .. } => walk(body),
            })
        }
        walk(&self.script)
    }

    /// Checks references and engine constraints; returns the initial topology.
    pub fn validate(&self) -> Result<Topology, ScenarioError> {
        let topo = self.topology.build()?;
        let mut known: std::collections::BTreeSet<NodeId> = topo.nodes().clone();
        for op in &self.dynamic_ops {
            if let OpSpec::AddNode { node, .. } = &op.op {
                known.insert(node.clone());
            }
        }
        fn walk_added(entries: &[ScriptEntry], known: &mut std::collections::BTreeSet<NodeId>) {
            for e in entries {
                match e {
                    ScriptEntry::Step(StepSpec::Op(OpSpec::AddNode { node, .. })) => {
                        known.insert(node.clone());
                    }
                    ScriptEntry::Repeat { body, .. } => walk_added(body, known),
                    _ => {}
                }
            }
        }
        walk_added(&self.script, &mut known);
        let check = |field: &str, n: &NodeId| -> Result<(), ScenarioError> {
            if known.contains(n) {
                Ok(())
            } else {
                Err(invalid(field, format!("unknown node {n}")))
            }
        };
        for n in self.nodes.keys() {
            check("nodes", n)?;
        }
        for c in &self.channel_latency {
            check("latency", &c.from)?;
            check("latency", &c.to)?;
        }
        for f in &self.faults {
            check("faults", &f.node)?;
        }
        let check_op = |op: &OpSpec| -> Result<(), ScenarioError> {
            match op {
                OpSpec::AddDep { node, pred } | OpSpec::RemDep { node, pred } => {
                    check("dynamic_ops", node)?;
                    check("dynamic_ops", pred)
                }
                OpSpec::AddNode { preds, succs, .. } => preds.iter().chain(succs).try_for_each(|n| check("dynamic_ops", n)),
                OpSpec::RemNode { node } => check("dynamic_ops", node),
            }
        };
        for op in &self.dynamic_ops {
            check_op(&op.op)?;
        }
        fn walk_steps(entries: &[ScriptEntry], f: &mut dyn FnMut(&StepSpec) -> Result<(), ScenarioError>) -> Result<(), ScenarioError> {
            for e in entries {
                match e {
                    ScriptEntry::Step(s) => f(s)?,
                    ScriptEntry::Repeat { body, .. } => walk_steps(body, f)?,
                }
            }
            Ok(())
        }
        walk_steps(&self.script, &mut |s| match s {
            StepSpec::Emit { node, .. } | StepSpec::Publish(node) | StepSpec::Crash(node) | StepSpec::Recover(node) => {
                check("script", node)
            }
            StepSpec::Deliver { from, to } => {
                check("script", from)?;
                check("script", to)
            }
            StepSpec::Op(op) => check_op(op),
            StepSpec::Nop => Ok(()),
        })?;
        if let Some(w) = &self.workload {
            if !(w.rate > 0.0) || !(w.duration > 0.0) {
                return Err(invalid("workload", "rate and duration must be positive"));
            }
            // A node that loses all its dependencies through a timed op
            // becomes a source and may be driven as one.
            let mut later = topo.clone();
            let mut ops: Vec<&TimedOp> = self.dynamic_ops.iter().collect();
            ops.sort_by_key(|o| o.at);
            for op in ops {
                let _ = match &op.op {
                    OpSpec::AddDep { node, pred } => later.add_edge(pred, node),
                    OpSpec::RemDep { node, pred } => later.remove_edge(pred, node),
                    OpSpec::AddNode { .. } | OpSpec::RemNode { .. } => Ok(()),
                };
            }
            for s in &w.sources {
                check("workload.sources", s)?;
                let initially = topo.preds(s)?.is_empty();
                let eventually = later.preds(s).map_or(false, |p| p.is_empty());
                if !initially && !eventually {
                    return Err(invalid("workload.sources", format!("{s} is not a source")));
                }
            }
            if topo.sources().is_empty() {
                return Err(invalid("workload", "topology has no sources"));
            }
        }
        let dynamic = !self.dynamic_ops.is_empty() || self.has_script_ops();
        match self.engine {
            Engine::Qprop if dynamic => {
                return Err(invalid("dynamic_ops", "topology changes need engine qprop_d"));
            }
            Engine::Central if dynamic => {
                return Err(invalid("dynamic_ops", "the central baseline does not support topology changes"));
            }
            Engine::Quarp => {
                if dynamic || self.workload.is_some() || !self.faults.is_empty() {
                    return Err(invalid("engine", "the overwrite baseline runs scripted src/rcv/pub steps only"));
                }
            }
            _ => {}
        }
        if self.scheduler == SchedulerSpec::Scripted && self.script.is_empty() {
            return Err(invalid("scheduler", "scripted scheduling needs a script"));
        }
        Ok(topo)
    }
}

fn parse_workload(toks: &[&str]) -> Result<Workload, String> {
    let mut w = Workload { rate: 0.0, duration: 0.0, mode: Mode::SinkCount, target: None, sources: Vec::new(), per_sink: false };
    let mut i = 0;
    while i < toks.len() {
        match toks[i] {
            "rate" => w.rate = parse_int(toks.get(i + 1), "rate")?,
            "duration" => w.duration = parse_int(toks.get(i + 1), "duration")?,
            "mode" => w.mode = toks.get(i + 1).ok_or("missing mode")?.parse()?,
            "target" => w.target = Some(parse_int(toks.get(i + 1), "target")?),
            "per_sink" => {
                w.per_sink = true;
                i += 1;
                continue;
            }
            "sources" => {
                w.sources = toks[i + 1..].iter().map(NodeId::new).collect();
                break;
            }
            other => return Err(format!("unknown workload setting '{other}'")),
        }
        i += 2;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;

    const APPENDIX_B: &str = "
        name appendix_b
        topology diamond5
        node A init 5
        node B init 3
        node C init 8 update sum
        node D init 2 update difference
        node E init 10 update sum
        scheduler scripted
        script
          emit A 7
          deliver A C   # C updates
          repeat 2
            nop
          end
        end
    ";

    #[test]
    fn parses_text() {
        let sc = Scenario::from_text(APPENDIX_B).unwrap();
        assert_eq!(sc.name, "appendix_b");
        assert_eq!(sc.topology, TopologySpec::Diamond5);
        assert_eq!(sc.node_spec(&nid("D")).update, Some(UpdateFn::Difference));
        assert_eq!(sc.node_spec(&nid("A")).init, Some(5));
        assert_eq!(sc.script.len(), 3);
        assert_eq!(sc.script[0], ScriptEntry::Step(StepSpec::Emit { node: nid("A"), value: Some(7) }));
        assert!(matches!(sc.script[2], ScriptEntry::Repeat { repeat: Repeat::Times(2), .. }));
        sc.validate().unwrap();
    }

    #[test]
    fn json_roundtrip() {
        let sc = Scenario::from_text(APPENDIX_B).unwrap();
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn steps_and_ops_roundtrip_through_text() {
        for line in ["emit A 7", "emit A", "deliver A C", "pub D", "op add_dep D A", "op rem_node X", "crash C", "nop"] {
            let step: StepSpec = line.parse().unwrap();
            assert_eq!(step.to_string(), line);
        }
        let rcv: StepSpec = "rcv C A".parse().unwrap();
        assert_eq!(rcv, StepSpec::Deliver { from: nid("A"), to: nid("C") });
        let op: OpSpec = "add_node X preds A B succs E init 4 update difference".parse().unwrap();
        assert_eq!(op.to_string().parse::<OpSpec>().unwrap(), op);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = Scenario::from_text("topology diamond5\nbogus 1\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 2, .. }), "{err}");
        let err = Scenario::from_text("topology diamond5\nscript\nemit A\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 2, .. }), "{err}");
        let err = Scenario::from_text("topology diamond5\nscript\nfly A\nend\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn dynamic_ops_need_the_dynamic_engine() {
        let sc = Scenario::from_text("topology diamond5\nat 10 op add_dep E A\n").unwrap();
        assert!(matches!(sc.validate(), Err(ScenarioError::Validation { .. })));
        let sc = Scenario::from_text("engine qprop_d\ntopology diamond5\nat 10 op add_dep E A\n").unwrap();
        sc.validate().unwrap();
    }

    #[test]
    fn unresolved_references_are_rejected() {
        let sc = Scenario::from_text("topology diamond5\nnode Z init 1\n").unwrap();
        assert!(sc.validate().is_err());
        let sc = Scenario::from_text("topology diamond5\nscript\ndeliver A Q\nend\n").unwrap();
        assert!(sc.validate().is_err());
        let sc = Scenario::from_text("nodes A B\nedges A->B B->A\n").unwrap();
        assert!(matches!(sc.validate(), Err(ScenarioError::Topology(GraphError::CycleDetected { .. }))));
    }

    #[test]
    fn workload_line() {
        let sc = Scenario::from_text("topology diamond5\nworkload rate 50 duration 2 mode sourceCount sources A\n").unwrap();
        let w = sc.workload.as_ref().unwrap();
        assert_eq!(w.requests(), 100);
        assert_eq!(w.mode, Mode::SourceCount);
        assert_eq!(w.sources, vec![nid("A")]);
        sc.validate().unwrap();
    }

    #[test]
    fn busywork_sets_cost() {
        let sc = Scenario::from_text("topology diamond5\ndefaults update busywork 5\n").unwrap();
        assert_eq!(sc.defaults, NodeSpec { init: None, update: Some(UpdateFn::Sum), cost: Some(5) });
    }
}
