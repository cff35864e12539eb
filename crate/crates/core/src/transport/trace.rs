use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::ids::NodeId;
use crate::value::PropagationValue;

/// One recorded event. Serialized as a JSON object with the fields
/// `seq`, `time`, `kind`, `payload` and `node`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub time: u64,
    #[serde(flatten)]
    pub kind: EventKind,
    pub node: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    Send { to: NodeId, message: MessageRecord },
    Deliver { from: NodeId, message: MessageRecord },
    Update(UpdateRecord),
    /// Values of `pred` with fClock strictly below `below` were dropped.
    Prune { pred: NodeId, below: u64, removed: Vec<u64> },
    SourceEmit { value: PropagationValue, requested_at: u64, cost: u64 },
    TopologyOp(TopologyRecord),
    Crash,
    Recover,
    BrittleAdded { pred: NodeId },
    MovedToI { pred: NodeId, moved: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub msg_id: u64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<PropagationValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// The chosen argument combination in canonical predecessor order.
    pub args: Vec<PropagationValue>,
    pub result: PropagationValue,
    /// Predecessor whose delivery triggered the update.
    pub trigger: Option<NodeId>,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TopologyRecord {
    Initial { nodes: Vec<NodeId>, edges: Vec<(NodeId, NodeId)> },
    Started { description: String },
    EdgeAdded { from: NodeId, to: NodeId },
    EdgeRemoved { from: NodeId, to: NodeId },
    NodeAdded { node: NodeId },
    NodeRemoved { node: NodeId },
    Aborted { description: String, reason: String },
    SourcesAdded { from: NodeId, sources: BTreeSet<NodeId> },
    SourcesRemoved { from: NodeId, sources: BTreeSet<NodeId>, removed: BTreeSet<NodeId> },
    InputCleared { pred: NodeId, removed: Vec<u64> },
    BecameSource,
    RetiredSource,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Send { .. } => "Send",
            EventKind::Deliver { .. } => "Deliver",
            EventKind::Update(_) => "Update",
            EventKind::Prune { .. } => "Prune",
            EventKind::SourceEmit { .. } => "SourceEmit",
            EventKind::TopologyOp(_) => "TopologyOp",
            EventKind::Crash => "Crash",
            EventKind::Recover => "Recover",
            EventKind::BrittleAdded { .. } => "BrittleAdded",
            EventKind::MovedToI { .. } => "MovedToI",
        }
    }

    /// Kinds retained at [`TraceLevel::Light`].
    pub fn is_light(&self) -> bool {
        matches!(self, EventKind::Update(_) | EventKind::SourceEmit { .. } | EventKind::TopologyOp(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    #[default]
    Full,
    /// Updates, emissions and topology records only.
    Light,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

impl Trace {
    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn updates(&self) -> impl Iterator<Item = (&TraceEvent, &UpdateRecord)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Update(u) => Some((e, u)),
            _ => None,
        })
    }

    pub fn updates_at<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = &'a UpdateRecord> + 'a {
        self.updates().filter(move |(e, _)| &e.node == node).map(|(_, u)| u)
    }

    pub fn emissions(&self) -> impl Iterator<Item = (&TraceEvent, &PropagationValue, u64)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::SourceEmit { value, requested_at, .. } => Some((e, value, *requested_at)),
            _ => None,
        })
    }

    pub fn prunes_at<'a>(&'a self, node: &'a NodeId) -> impl Iterator<Item = (&'a NodeId, u64, &'a [u64])> + 'a {
        self.events.iter().filter(move |e| &e.node == node).filter_map(|e| match &e.kind {
            EventKind::Prune { pred, below, removed } => Some((pred, *below, removed.as_slice())),
            _ => None,
        })
    }

    pub fn to_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn from_jsonl<R: BufRead>(input: R) -> Result<Trace, TraceIoError> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|source| TraceIoError::Parse { line: i + 1, source })?;
            events.push(e);
        }
        Ok(Trace { events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;

    fn sample() -> Trace {
        let v = PropagationValue::from_source(nid("A"), 7, 1);
        Trace {
            events: vec![
                TraceEvent {
                    seq: 0,
                    time: 0,
                    node: nid("A"),
                    kind: EventKind::TopologyOp(TopologyRecord::Initial {
                        nodes: vec![nid("A"), nid("C")],
                        edges: vec![(nid("A"), nid("C"))],
                    }),
                },
                TraceEvent {
                    seq: 1,
                    time: 0,
                    node: nid("A"),
                    kind: EventKind::SourceEmit { value: v.clone(), requested_at: 0, cost: 0 },
                },
                TraceEvent {
                    seq: 2,
                    time: 0,
                    node: nid("A"),
                    kind: EventKind::Send {
                        to: nid("C"),
                        message: MessageRecord { msg_id: 4, kind: "change".into(), value: Some(v), detail: None },
                    },
                },
                TraceEvent { seq: 3, time: 2, node: nid("C"), kind: EventKind::Crash },
                TraceEvent {
                    seq: 4,
                    time: 2,
                    node: nid("C"),
                    kind: EventKind::Prune { pred: nid("A"), below: 1, removed: vec![0] },
                },
            ],
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let t = sample();
        let text = t.to_jsonl_string();
        assert_eq!(text.lines().count(), 5);
        let back = Trace::from_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn stable_field_names() {
        let text = sample().to_jsonl_string();
        let first: serde_json::Value = serde_json::from_str(text.lines().nth(3).unwrap()).unwrap();
        assert_eq!(first["kind"], "Crash");
        assert_eq!(first["seq"], 3);
        assert_eq!(first["node"], "C");
        let prune: serde_json::Value = serde_json::from_str(text.lines().nth(4).unwrap()).unwrap();
        assert_eq!(prune["payload"]["below"], 1);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = Trace::from_jsonl("\n{bad".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceIoError::Parse { line: 2, .. }));
    }
}
