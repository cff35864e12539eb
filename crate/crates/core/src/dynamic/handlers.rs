use std::collections::BTreeSet;

use crate::engine::NodeState;
use crate::ids::NodeId;
use crate::message::Message;
use crate::transport::{Ctx, EventKind, TopologyRecord};
use crate::value::PropagationValue;

impl NodeState {
    /// `S` keys, or `{self}` for a source.
    pub fn reachable_sources(&self) -> BTreeSet<NodeId> {
        if self.is_source() {
            BTreeSet::from([self.id.clone()])
        } else {
            self.routing.keys().cloned().collect()
        }
    }

    /// newSucc handler.
    pub fn handle_new_succ(&mut self, succ: &NodeId) -> (Option<PropagationValue>, BTreeSet<NodeId>) {
        self.ds.insert(succ.clone());
        (self.last_prop.clone(), self.reachable_sources())
    }

    /// remSucc handler.
    pub fn handle_rem_succ(&mut self, succ: &NodeId) -> BTreeSet<NodeId> {
        self.ds.remove(succ);
        self.reachable_sources()
    }

    /// Lines 2-5 of dependency addition, once `pred` has answered. Returns
    /// whether this node was a source before.
    ///
    /// `I.pred` starts with `pred`'s last value even when its sources overlap
    /// ours: without an `I` entry no combination over `DP` exists, so the
    /// node could never update again and its siblings would never advance
    /// far enough for `pred` to synchronise. Sibling values older than that
    /// last value cannot be paired with anything from `pred` either way.
    pub fn accept_new_pred(&mut self, pred: &NodeId, pred_last: Option<PropagationValue>, sources: &BTreeSet<NodeId>) -> bool {
        let was_source = self.is_source();
        self.dp.insert(pred.clone());
        self.inputs.insert(pred.clone(), pred_last.into_iter().collect());
        self.add_new_pred_sources(pred, sources);
        if was_source {
            self.may_emit = false;
        }
        was_source
    }

    /// Routing for a predecessor that was just added: it carries `sources`
    /// but is never brittle, since its values already sit in `I`.
    fn add_new_pred_sources(&mut self, pred: &NodeId, sources: &BTreeSet<NodeId>) {
        for source in sources {
            self.routing.entry(source.clone()).or_default().insert(pred.clone());
        }
    }

    /// Local part of the addSources handler.
    pub fn add_sources_local(&mut self, from: &NodeId, sources: &BTreeSet<NodeId>, ctx: &mut Ctx<Message>) {
        for source in sources {
            match self.routing.get_mut(source) {
                Some(carriers) => {
                    if carriers.insert(from.clone()) && !self.brittle.contains_key(from) {
                        self.brittle.insert(from.clone(), Vec::new());
                        ctx.record(EventKind::BrittleAdded { pred: from.clone() });
                    }
                }
                None => {
                    self.routing.insert(source.clone(), BTreeSet::from([from.clone()]));
                }
            }
        }
        ctx.record(EventKind::TopologyOp(TopologyRecord::SourcesAdded { from: from.clone(), sources: sources.clone() }));
    }

    /// Lines 2-3 of dependency removal.
    pub fn drop_pred(&mut self, pred: &NodeId) {
        self.inputs.remove(pred);
        self.dp.remove(pred);
        self.brittle.remove(pred);
    }

    /// Local part of the remSources handler; returns the sources whose
    /// entries disappeared.
    pub fn rem_sources_local(&mut self, from: &NodeId, sources: &BTreeSet<NodeId>, ctx: &mut Ctx<Message>) -> BTreeSet<NodeId> {
        let mut removed = BTreeSet::new();
        for source in sources {
            let Some(carriers) = self.routing.get_mut(source) else { continue };
            carriers.remove(from);
            if carriers.is_empty() {
                self.routing.remove(source);
                removed.insert(source.clone());
            } else if let Some(seq) = self.inputs.get_mut(from) {
                if !seq.is_empty() {
                    let dropped: Vec<u64> = seq.iter().map(|v| v.fclock).collect();
                    seq.clear();
                    ctx.record(EventKind::TopologyOp(TopologyRecord::InputCleared { pred: from.clone(), removed: dropped }));
                }
            }
        }
        ctx.record(EventKind::TopologyOp(TopologyRecord::SourcesRemoved {
            from: from.clone(),
            sources: sources.clone(),
            removed: removed.clone(),
        }));
        removed
    }

    /// Local part of the addSource handler.
    pub fn add_source_local(&mut self, from: &NodeId, source: &NodeId, ctx: &mut Ctx<Message>) {
        self.routing.entry(source.clone()).or_default().insert(from.clone());
        ctx.record(EventKind::TopologyOp(TopologyRecord::SourcesAdded {
            from: from.clone(),
            sources: BTreeSet::from([source.clone()]),
        }));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::NodeConfig;
    use crate::ids::nid;

    fn set(names: &[&str]) -> BTreeSet<NodeId> {
        names.iter().map(|n| nid(n)).collect()
    }

    fn ctx() -> Ctx<Message> {
        Ctx::new(nid("n"), 0)
    }

    fn node(id: &str, dp: &[&str], ds: &[&str]) -> NodeState {
        let mut n = NodeState::new(nid(id), set(dp), set(ds), NodeConfig::default());
        n.explored = true;
        n
    }

    #[test]
    fn new_succ_replies() {
        let mut a = node("A", &[], &["C"]);
        a.last_prop = Some(PropagationValue::from_source(nid("A"), 5, 0));
        let (last, sources) = a.handle_new_succ(&nid("D"));
        assert_eq!(sources, set(&["A"]));
        assert_eq!(last.unwrap().value, 5);
        assert_eq!(a.ds, set(&["C", "D"]));
        a.handle_new_succ(&nid("D"));
        assert_eq!(a.ds.len(), 2);

        let mut c = node("C", &["A", "B"], &["E"]);
        c.routing.insert(nid("A"), set(&["A"]));
        c.routing.insert(nid("B"), set(&["B"]));
        assert_eq!(c.handle_new_succ(&nid("F")).1, set(&["A", "B"]));
    }

    #[test]
    fn rem_succ_replies() {
        let mut a = node("A", &[], &["C"]);
        assert_eq!(a.handle_rem_succ(&nid("C")), set(&["A"]));
        assert!(a.ds.is_empty());
        assert_eq!(a.handle_rem_succ(&nid("Z")), set(&["A"]));
    }

    #[test]
    fn add_sources_extends_or_creates() {
        let mut e = node("E", &["C", "D"], &[]);
        e.routing.insert(nid("A"), set(&["C"]));
        let mut c = ctx();
        e.add_sources_local(&nid("D"), &set(&["A"]), &mut c);
        assert_eq!(e.routing[&nid("A")], set(&["C", "D"]));
        assert_eq!(e.brittle.get(&nid("D")), Some(&Vec::new()));
        assert!(c.events().any(|k| matches!(k, EventKind::BrittleAdded { .. })));

        let mut d = node("D", &["A", "B"], &["E"]);
        d.routing.insert(nid("B"), set(&["B"]));
        d.add_sources_local(&nid("A"), &set(&["A"]), &mut ctx());
        assert_eq!(d.routing[&nid("A")], set(&["A"]));
        assert!(d.brittle.is_empty());
    }

    #[test]
    fn repeated_announcement_from_a_carrier_is_not_brittle() {
        let mut e = node("E", &["C", "D"], &[]);
        e.routing.insert(nid("A"), set(&["C", "D"]));
        let mut c = ctx();
        e.add_sources_local(&nid("D"), &set(&["A"]), &mut c);
        assert!(e.brittle.is_empty());
        assert!(!c.events().any(|k| matches!(k, EventKind::BrittleAdded { .. })));
    }

    #[test]
    fn add_sources_keeps_existing_brittle_values() {
        let mut e = node("E", &["C", "D"], &[]);
        e.routing.insert(nid("A"), set(&["C"]));
        e.routing.insert(nid("B"), set(&["C"]));
        e.brittle.insert(nid("D"), vec![PropagationValue::from_source(nid("D"), 1, 1)]);
        e.add_sources_local(&nid("D"), &set(&["A", "B"]), &mut ctx());
        assert_eq!(e.brittle[&nid("D")].len(), 1);
    }

    #[test]
    fn rem_sources_shrinks_and_clears() {
        let mut e = node("E", &["C", "D"], &[]);
        e.routing.insert(nid("A"), set(&["C", "D"]));
        e.inputs.insert(nid("D"), vec![PropagationValue::from_source(nid("D"), 1, 1)]);
        let mut c = ctx();
        let removed = e.rem_sources_local(&nid("D"), &set(&["A"]), &mut c);
        assert!(removed.is_empty());
        assert_eq!(e.routing[&nid("A")], set(&["C"]));
        assert!(e.inputs[&nid("D")].is_empty());

        let mut d = node("D", &["B"], &["E"]);
        d.routing.insert(nid("A"), set(&["A"]));
        assert_eq!(d.rem_sources_local(&nid("A"), &set(&["A"]), &mut ctx()), set(&["A"]));
        assert!(!d.routing.contains_key(&nid("A")));

        assert!(d.rem_sources_local(&nid("A"), &BTreeSet::new(), &mut ctx()).is_empty());
    }

    #[test]
    fn add_source_entry() {
        let mut n = node("X", &["B"], &[]);
        n.add_source_local(&nid("B"), &nid("B"), &mut ctx());
        assert_eq!(n.routing[&nid("B")], set(&["B"]));
        n.add_source_local(&nid("Q"), &nid("B"), &mut ctx());
        assert_eq!(n.routing[&nid("B")], set(&["B", "Q"]));
    }

    #[test]
    fn new_pred_gets_input() {
        let mut d = node("D", &["B"], &["E"]);
        d.routing.insert(nid("B"), set(&["B"]));
        let last = PropagationValue::from_source(nid("A"), 7, 1);
        assert!(!d.accept_new_pred(&nid("A"), Some(last.clone()), &set(&["A"])));
        assert_eq!(d.inputs[&nid("A")], vec![last]);

        let mut e = node("E", &["C"], &[]);
        e.routing.insert(nid("A"), set(&["C"]));
        let last = PropagationValue::new(nid("D"), 3, [(nid("A"), 2)].into_iter().collect(), 4);
        e.accept_new_pred(&nid("D"), Some(last.clone()), &set(&["A"]));
        assert_eq!(e.inputs[&nid("D")], vec![last]);
        assert_eq!(e.routing[&nid("A")], set(&["C", "D"]));
        let mut c = ctx();
        e.add_sources_local(&nid("D"), &set(&["A"]), &mut c);
        assert!(e.brittle.is_empty());
    }
}
