use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ids::NodeId;
use crate::transport::WireMessage;
use crate::value::PropagationValue;

/// Messages exchanged between protocol nodes.
///
/// The five dynamic-topology messages travel as `Request`s and are answered
/// with a `Reply` carrying the handler's return value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Sources { sources: BTreeSet<NodeId>, init: PropagationValue },
    Start,
    Change { value: PropagationValue },
    Request { id: u64, body: Request },
    Reply { id: u64, body: Reply },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    NewSucc { succ: NodeId },
    AddSources { from: NodeId, sources: BTreeSet<NodeId> },
    RemSucc { succ: NodeId },
    RemSources { from: NodeId, sources: BTreeSet<NodeId> },
    AddSource { from: NodeId, source: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Reply {
    NewSucc { last: Option<PropagationValue>, sources: BTreeSet<NodeId> },
    RemSucc { sources: BTreeSet<NodeId> },
    Done,
}

impl Request {
    pub fn name(&self) -> &'static str {
        match self {
            Request::NewSucc { .. } => "newSucc",
            Request::AddSources { .. } => "addSources",
            Request::RemSucc { .. } => "remSucc",
            Request::RemSources { .. } => "remSources",
            Request::AddSource { .. } => "addSource",
        }
    }
}

fn fmt_set(set: &BTreeSet<NodeId>) -> String {
    let names: Vec<&str> = set.iter().map(|n| n.as_str()).collect();
    format!("{{{}}}", names.join(","))
}

impl WireMessage for Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::Sources { .. } => "sources",
            Message::Start => "start",
            Message::Change { .. } => "change",
            Message::Request { body, .. } => body.name(),
            Message::Reply { .. } => "reply",
        }
    }

    fn is_control(&self) -> bool {
        matches!(self, Message::Request { .. } | Message::Reply { .. })
    }

    fn value(&self) -> Option<&PropagationValue> {
        match self {
            Message::Sources { init, .. } => Some(init),
            Message::Change { value } => Some(value),
            Message::Reply { body: Reply::NewSucc { last, .. }, .. } => last.as_ref(),
            _ => None,
        }
    }

    fn detail(&self) -> Option<String> {
        match self {
            Message::Sources { sources, .. } => Some(fmt_set(sources)),
            Message::Start | Message::Change { .. } => None,
            Message::Request { id, body } => Some(match body {
                Request::NewSucc { succ } | Request::RemSucc { succ } => format!("#{id} succ={succ}"),
                Request::AddSources { from, sources } | Request::RemSources { from, sources } => {
                    format!("#{id} from={from} sources={}", fmt_set(sources))
                }
                Request::AddSource { from, source } => format!("#{id} from={from} source={source}"),
            }),
            Message::Reply { id, body } => Some(match body {
                Reply::NewSucc { sources, .. } => format!("#{id} newSucc sources={}", fmt_set(sources)),
                Reply::RemSucc { sources } => format!("#{id} remSucc sources={}", fmt_set(sources)),
                Reply::Done => format!("#{id} done"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;

    #[test]
    fn control_classification() {
        let change = Message::Change { value: PropagationValue::from_source(nid("A"), 1, 1) };
        assert!(!change.is_control());
        assert_eq!(change.kind(), "change");
        let req = Message::Request { id: 3, body: Request::NewSucc { succ: nid("D") } };
        assert!(req.is_control());
        assert_eq!(req.kind(), "newSucc");
        assert_eq!(req.detail().unwrap(), "#3 succ=D");
    }

    #[test]
    fn json_roundtrip() {
        let msg = Message::Request {
            id: 1,
            body: Request::AddSources { from: nid("D"), sources: [nid("A")].into_iter().collect() },
        };
        let json = serde_json::to_string(&msg).unwrap();
        let back: Message = serde_json::from_str(&json).unwrap();
        assert_eq!(back, msg);
    }
}
