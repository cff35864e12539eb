use crate::engine::{insert_ordered, EngineError, NodeState};
use crate::message::Message;
use crate::transport::Ctx;
use crate::value::PropagationValue;

impl NodeState {
    /// Runs ahead of the change handler: values from brittle predecessors are
    /// held in `B_r` until they have caught up with their siblings. Returns the
    /// values this node propagated.
    pub fn pre_propagate(&mut self, v_new: PropagationValue, ctx: &mut Ctx<Message>) -> Result<Vec<PropagationValue>, EngineError> {
        if !self.explored {
            return Err(EngineError::BarrierNotPassed(self.id.clone()));
        }
        let from = v_new.from.clone();
        if !self.dp.contains(&from) {
            return Err(EngineError::UnknownPredecessor { node: self.id.clone(), pred: from });
        }
        let mut out = Vec::new();
        if self.is_brittle(&from) {
            let held = self.brittle.get_mut(&from).expect("brittle entry");
            insert_ordered(held, v_new.clone());
            if held.len() != 1 {
                return Ok(out);
            }
            if self.synchronised(&from) {
                self.move_to_i(&from, ctx)?;
                out.extend(self.try_update(&v_new, ctx)?);
            } else {
                let siblings: Vec<_> = self.dp.iter().filter(|p| **p != from && self.is_brittle_sibling(&from, p)).cloned().collect();
                for pred in siblings {
                    let pending: Vec<PropagationValue> =
                        self.inputs.get(&pred).map(|seq| seq.iter().skip(1).cloned().collect()).unwrap_or_default();
                    for val in pending {
                        let still_held = self.inputs.get(&pred).is_some_and(|seq| seq.iter().any(|v| v.fclock == val.fclock));
                        if still_held {
                            out.extend(self.pre_propagate(val, ctx)?);
                        }
                    }
                }
            }
        } else if self.has_brittle_sibling(&from) {
            self.store_input(v_new.clone())?;
            let brittle_siblings: Vec<_> = self.dp.iter().filter(|p| self.is_brittle_sibling(p, &from)).cloned().collect();
            if brittle_siblings.iter().all(|p| self.brittle.get(p).is_some_and(|held| !held.is_empty())) {
                out.extend(self.try_update(&v_new, ctx)?);
                for pred in brittle_siblings {
                    if self.synchronised(&pred) {
                        self.move_to_i(&pred, ctx)?;
                    }
                }
            }
        } else {
            out.extend(self.handle_change(v_new, ctx)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::engine::NodeConfig;
    use crate::ids::{nid, NodeId};
    use crate::value::UpdateFn;

    fn pv(from: &str, value: i64, clocks: &[(&str, u64)], fclock: u64) -> PropagationValue {
        PropagationValue::new(nid(from), value, clocks.iter().map(|(s, c)| (nid(s), *c)).collect(), fclock)
    }

    fn set(names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|n| nid(n)).collect()
    }

    /// E right after D gained A: I.C holds C's a1 value, D is brittle.
    fn brittle_e() -> NodeState {
        let mut e = NodeState::new(nid("E"), set(&["C", "D"]), BTreeSet::new(), NodeConfig::new(UpdateFn::Sum, 0));
        e.routing.insert(nid("A"), set(&["C", "D"]));
        e.routing.insert(nid("B"), set(&["C", "D"]));
        e.inputs.insert(nid("C"), vec![pv("C", 3, &[("A", 1), ("B", 0)], 1)]);
        e.inputs.insert(nid("D"), vec![pv("D", 2, &[("B", 0)], 0)]);
        e.brittle.insert(nid("D"), Vec::new());
        e.explored = true;
        e
    }

    fn ctx() -> Ctx<Message> {
        Ctx::new(nid("E"), 0)
    }

    #[test]
    fn plain_predecessor_goes_straight_through() {
        let mut e = brittle_e();
        e.brittle.clear();
        let out = e.pre_propagate(pv("D", 4, &[("A", 1), ("B", 0)], 1), &mut ctx()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, 7);
    }

    #[test]
    fn sibling_value_waits_for_first_brittle_value() {
        let mut e = brittle_e();
        let out = e.pre_propagate(pv("C", 5, &[("A", 2), ("B", 0)], 2), &mut ctx()).unwrap();
        assert!(out.is_empty());
        assert_eq!(e.inputs[&nid("C")].len(), 2);
    }

    #[test]
    fn synchronised_first_brittle_value_is_used() {
        let mut e = brittle_e();
        let out = e.pre_propagate(pv("D", 4, &[("A", 2), ("B", 0)], 1), &mut ctx()).unwrap();
        assert!(!e.is_brittle(&nid("D")));
        assert!(out.is_empty(), "C has no a2 value yet");
        let out = e.pre_propagate(pv("C", 6, &[("A", 2), ("B", 0)], 2), &mut ctx()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, 10);
        assert_eq!(out[0].sclocks, [(nid("A"), 2), (nid("B"), 0)].into_iter().collect());
    }

    #[test]
    fn unsynchronised_first_value_replays_siblings() {
        let mut e = brittle_e();
        e.inputs.insert(nid("C"), vec![pv("C", 1, &[("A", 0), ("B", 0)], 0)]);
        e.pre_propagate(pv("C", 3, &[("A", 1), ("B", 0)], 1), &mut ctx()).unwrap();
        assert_eq!(e.inputs[&nid("C")].len(), 2);
        let out = e.pre_propagate(pv("D", 4, &[("A", 2), ("B", 0)], 1), &mut ctx()).unwrap();
        // C's a1 value is replayed against D's pre-addition value.
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, 5);
        assert!(!e.is_brittle(&nid("D")));
        assert_eq!(e.inputs[&nid("D")].len(), 2);
    }

    #[test]
    fn later_brittle_values_are_only_stored() {
        let mut e = brittle_e();
        e.inputs.insert(nid("C"), vec![pv("C", 1, &[("A", 0), ("B", 0)], 0)]);
        e.pre_propagate(pv("D", 4, &[("A", 2), ("B", 0)], 1), &mut ctx()).unwrap();
        let out = e.pre_propagate(pv("D", 5, &[("A", 3), ("B", 0)], 2), &mut ctx()).unwrap();
        assert!(out.is_empty());
        assert_eq!(e.brittle[&nid("D")].len(), 2);
    }

    #[test]
    fn errors_before_exploration_and_for_strangers() {
        let mut e = brittle_e();
        assert!(matches!(e.pre_propagate(pv("Z", 0, &[], 1), &mut ctx()), Err(EngineError::UnknownPredecessor { .. })));
        e.explored = false;
        assert!(matches!(e.pre_propagate(pv("C", 0, &[], 1), &mut ctx()), Err(EngineError::BarrierNotPassed(_))));
    }
}
