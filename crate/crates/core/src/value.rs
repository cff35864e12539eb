use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::NodeId;

pub type LogicalTime = u64;

/// Per-source logical timestamps carried by a value.
pub type SourceClocks = BTreeMap<NodeId, LogicalTime>;

/// `(from, value, sClocks, fClock)`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PropagationValue {
    pub from: NodeId,
    pub value: i64,
    #[serde(rename = "sClocks")]
    pub sclocks: SourceClocks,
    #[serde(rename = "fClock")]
    pub fclock: LogicalTime,
}

impl PropagationValue {
    pub fn new(from: NodeId, value: i64, sclocks: SourceClocks, fclock: LogicalTime) -> Self {
        PropagationValue { from, value, sclocks, fclock }
    }

    /// A source's own emission: `{[self, clock]}` stamped with `clock`.
    pub fn from_source(source: NodeId, value: i64, clock: LogicalTime) -> Self {
        let sclocks = BTreeMap::from([(source.clone(), clock)]);
        PropagationValue { from: source, value, sclocks, fclock: clock }
    }

    pub fn clock_of(&self, source: &NodeId) -> Option<LogicalTime> {
        self.sclocks.get(source).copied()
    }
}

impl fmt::Debug for PropagationValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {{", self.from, self.value)?;
        for (i, (s, c)) in self.sclocks.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "[{s},{c}]")?;
        }
        write!(f, "}}, {})", self.fclock)
    }
}

/// The closed catalog of update functions. Arguments arrive in canonical
/// predecessor order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateFn {
    #[default]
    Sum,
    /// First argument minus the rest.
    Difference,
    /// First argument.
    Identity,
}

impl UpdateFn {
    pub fn apply(&self, args: &[i64]) -> i64 {
        match self {
            UpdateFn::Sum => args.iter().fold(0i64, |acc, v| acc.wrapping_add(*v)),
            UpdateFn::Difference => match args.split_first() {
                Some((first, rest)) => rest.iter().fold(*first, |acc, v| acc.wrapping_sub(*v)),
                None => 0,
            },
            UpdateFn::Identity => args.first().copied().unwrap_or(0),
        }
    }

    pub fn parse(name: &str) -> Option<UpdateFn> {
        match name {
            "sum" | "busywork" => Some(UpdateFn::Sum),
            "difference" | "diff" => Some(UpdateFn::Difference),
            "identity" | "id" => Some(UpdateFn::Identity),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UpdateFn::Sum => "sum",
            UpdateFn::Difference => "difference",
            UpdateFn::Identity => "identity",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::nid;

    #[test]
    fn source_emission_shape() {
        let v = PropagationValue::from_source(nid("A"), 7, 1);
        assert_eq!(format!("{v:?}"), "(A, 7, {[A,1]}, 1)");
        assert_eq!(v.clock_of(&nid("A")), Some(1));
        assert_eq!(v.clock_of(&nid("B")), None);
    }

    #[test]
    fn json_field_names() {
        let v = PropagationValue::from_source(nid("A"), 5, 0);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"{"from":"A","value":5,"sClocks":{"A":0},"fClock":0}"#);
        let back: PropagationValue = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn catalog() {
        assert_eq!(UpdateFn::Sum.apply(&[7, 3]), 10);
        assert_eq!(UpdateFn::Difference.apply(&[7, 0]), 7);
        assert_eq!(UpdateFn::Difference.apply(&[5, 3, 1]), 1);
        assert_eq!(UpdateFn::Identity.apply(&[4, 9]), 4);
        assert_eq!(UpdateFn::Sum.apply(&[]), 0);
        assert_eq!(UpdateFn::parse("busywork"), Some(UpdateFn::Sum));
        assert_eq!(UpdateFn::parse("mul"), None);
    }
}
