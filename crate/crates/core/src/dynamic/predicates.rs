use crate::engine::{EngineError, NodeState};
use crate::ids::NodeId;
use crate::transport::{Ctx, EventKind};
use crate::message::Message;

impl NodeState {
    pub fn is_brittle(&self, pred: &NodeId) -> bool {
        self.brittle.contains_key(pred)
    }

    /// Some `S` entry holds both `pred` and a brittle predecessor.
    pub fn has_brittle_sibling(&self, pred: &NodeId) -> bool {
        self.routing
            .values()
            .any(|dps| dps.contains(pred) && dps.iter().any(|b| b != pred && self.is_brittle(b)))
    }

    /// `pred_brittle` is brittle and shares an `S` entry with `pred`.
    pub fn is_brittle_sibling(&self, pred_brittle: &NodeId, pred: &NodeId) -> bool {
        self.is_brittle(pred_brittle)
            && self.routing.values().any(|dps| dps.contains(pred_brittle) && dps.contains(pred))
    }

    /// For every sibling sharing a source `s` with `pred_brittle`:
    /// `B_r.pred_brittle.first().s - I.sibling.first().s <= 1`.
    ///
    /// False while either first value is missing. A clock absent from either
    /// value does not constrain. With `I.pred_brittle` empty there is no
    /// older value a sibling could still pair with, so the first held value
    /// is synchronised.
    pub fn synchronised(&self, pred_brittle: &NodeId) -> bool {
        let Some(held) = self.brittle.get(pred_brittle) else { return true };
        let Some(first_brittle) = held.first() else { return false };
        if self.inputs.get(pred_brittle).is_none_or(|seq| seq.is_empty()) {
            return true;
        }
        for (s, dps) in &self.routing {
            if !dps.contains(pred_brittle) {
                continue;
            }
            for pred in dps.iter().filter(|p| *p != pred_brittle && self.dp.contains(*p)) {
                let Some(first) = self.inputs.get(pred).and_then(|seq| seq.first()) else {
                    return false;
                };
                if let (Some(b), Some(i)) = (first_brittle.clock_of(s), first.clock_of(s)) {
                    if b as i128 - i as i128 > 1 {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Merges `B_r.pred_brittle` into `I.pred_brittle` and clears brittleness.
    pub fn move_to_i(&mut self, pred_brittle: &NodeId, ctx: &mut Ctx<Message>) -> Result<(), EngineError> {
        let held = self
            .brittle
            .remove(pred_brittle)
            .ok_or_else(|| EngineError::NotBrittle { node: self.id.clone(), pred: pred_brittle.clone() })?;
        let moved: Vec<u64> = held.iter().map(|v| v.fclock).collect();
        let seq = self.inputs.entry(pred_brittle.clone()).or_default();
        for v in held {
            crate::engine::insert_ordered(seq, v);
        }
        ctx.record(EventKind::MovedToI { pred: pred_brittle.clone(), moved });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::engine::NodeConfig;
    use crate::ids::nid;
    use crate::value::PropagationValue;

    fn pv(from: &str, clocks: &[(&str, u64)], fclock: u64) -> PropagationValue {
        PropagationValue::new(nid(from), 0, clocks.iter().map(|(s, c)| (nid(s), *c)).collect(), fclock)
    }

    /// E after D gained A as a predecessor: D is brittle, sibling of C.
    fn brittle_e() -> NodeState {
        let mut e = NodeState::new(
            nid("E"),
            [nid("C"), nid("D")].into_iter().collect(),
            BTreeSet::new(),
            NodeConfig::default(),
        );
        e.routing.insert(nid("A"), [nid("C"), nid("D")].into_iter().collect());
        e.routing.insert(nid("B"), [nid("C"), nid("D")].into_iter().collect());
        e.inputs.insert(nid("C"), vec![pv("C", &[("A", 1), ("B", 0)], 1)]);
        e.inputs.insert(nid("D"), vec![pv("D", &[("B", 0)], 0)]);
        e.brittle.insert(nid("D"), Vec::new());
        e.explored = true;
        e
    }

    #[test]
    fn predicates_after_adding_a_dependency() {
        let e = brittle_e();
        assert!(e.is_brittle(&nid("D")));
        assert!(!e.is_brittle(&nid("C")));
        assert!(e.has_brittle_sibling(&nid("C")));
        assert!(!e.has_brittle_sibling(&nid("D")));
        assert!(e.is_brittle_sibling(&nid("D"), &nid("C")));
        assert!(!e.is_brittle_sibling(&nid("C"), &nid("D")));
    }

    #[test]
    fn empty_brittle_store_is_not_synchronised() {
        assert!(!brittle_e().synchronised(&nid("D")));
    }

    #[test]
    fn one_clock_ahead_is_synchronised() {
        let mut e = brittle_e();
        e.brittle.get_mut(&nid("D")).unwrap().push(pv("D", &[("A", 2), ("B", 0)], 1));
        assert!(e.synchronised(&nid("D")));
    }

    #[test]
    fn two_clocks_ahead_is_not() {
        let mut e = brittle_e();
        e.inputs.insert(nid("C"), vec![pv("C", &[("A", 0), ("B", 0)], 0)]);
        e.brittle.get_mut(&nid("D")).unwrap().push(pv("D", &[("A", 2), ("B", 0)], 1));
        assert!(!e.synchronised(&nid("D")));
    }

    #[test]
    fn cleared_brittle_input_synchronises_on_first_value() {
        let mut e = brittle_e();
        e.inputs.insert(nid("C"), vec![pv("C", &[("A", 0), ("B", 0)], 0)]);
        e.inputs.insert(nid("D"), Vec::new());
        e.brittle.get_mut(&nid("D")).unwrap().push(pv("D", &[("A", 5), ("B", 0)], 3));
        assert!(e.synchronised(&nid("D")));
    }

    #[test]
    fn empty_sibling_input_is_not_synchronised() {
        let mut e = brittle_e();
        e.inputs.insert(nid("C"), Vec::new());
        e.brittle.get_mut(&nid("D")).unwrap().push(pv("D", &[("A", 1)], 1));
        assert!(!e.synchronised(&nid("D")));
    }

    #[test]
    fn no_brittle_entries_means_nothing_is_brittle() {
        let mut e = brittle_e();
        e.brittle.clear();
        assert!(!e.is_brittle(&nid("C")) && !e.is_brittle(&nid("D")));
        assert!(!e.has_brittle_sibling(&nid("C")));
    }

    #[test]
    fn move_to_i_merges_in_order() {
        let mut e = brittle_e();
        e.brittle.get_mut(&nid("D")).unwrap().push(pv("D", &[("A", 2), ("B", 0)], 1));
        let mut ctx = Ctx::new(nid("E"), 0);
        e.move_to_i(&nid("D"), &mut ctx).unwrap();
        let clocks: Vec<u64> = e.inputs[&nid("D")].iter().map(|v| v.fclock).collect();
        assert_eq!(clocks, vec![0, 1]);
        assert!(e.brittle.is_empty());
        assert!(matches!(e.move_to_i(&nid("D"), &mut ctx), Err(EngineError::NotBrittle { .. })));
    }

    #[test]
    fn move_to_i_creates_missing_entry() {
        let mut e = brittle_e();
        e.inputs.remove(&nid("D"));
        e.brittle.insert(nid("D"), vec![pv("D", &[("A", 2)], 3)]);
        e.move_to_i(&nid("D"), &mut Ctx::new(nid("E"), 0)).unwrap();
        assert_eq!(e.inputs[&nid("D")].len(), 1);

        e.brittle.insert(nid("D"), Vec::new());
        e.move_to_i(&nid("D"), &mut Ctx::new(nid("E"), 0)).unwrap();
        assert_eq!(e.inputs[&nid("D")].len(), 1);
    }
}
