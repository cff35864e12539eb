use std::collections::{BTreeMap, BTreeSet};

use crate::ids::NodeId;
use crate::message::Message;
use crate::transport::{Ctx, EventKind, UpdateRecord};
use crate::value::{PropagationValue, SourceClocks};

use super::{EngineError, NodeState};

/// One value per direct predecessor, in canonical predecessor order.
pub type Combination = Vec<PropagationValue>;

/// Cross product of `{v_new}` (pinned for its sender) with the input sets of
/// every other predecessor. Empty when some other input set is empty.
pub fn candidate_combinations(state: &NodeState, v_new: &PropagationValue) -> Vec<Combination> {
    let mut combos: Vec<Combination> = vec![Vec::new()];
    for pred in &state.dp {
        let choices: Vec<&PropagationValue> = if *pred == v_new.from {
            vec![v_new]
        } else {
            state.inputs.get(pred).map(|s| s.iter().collect()).unwrap_or_default()
        };
        if choices.is_empty() {
            return Vec::new();
        }
        combos = combos
            .into_iter()
            .flat_map(|c| {
                choices.iter().map(move |v| {
                    let mut next = c.clone();
                    next.push((*v).clone());
                    next
                })
            })
            .collect();
    }
    combos
}

/// Two values constrain each other on `source` only if both carry it.
fn agree(a: &PropagationValue, b: &PropagationValue, source: &NodeId) -> bool {
    match (a.sclocks.get(source), b.sclocks.get(source)) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

/// Keeps the combinations in which, for every `[s, preds]` in `S`, all
/// arguments from `preds` agree on `sClocks.s`.
pub fn glitch_free_filter(combos: Vec<Combination>, routing: &BTreeMap<NodeId, BTreeSet<NodeId>>) -> Vec<Combination> {
    combos
        .into_iter()
        .filter(|combo| {
            routing.iter().all(|(s, preds)| {
                let args: Vec<&PropagationValue> = combo.iter().filter(|a| preds.contains(&a.from)).collect();
                args.iter().all(|a| args.iter().all(|b| agree(a, b, s)))
            })
        })
        .collect()
}

/// Lexicographic maximum of per-predecessor fClocks in canonical order.
pub fn select_last_match(matches: Vec<Combination>) -> Result<Combination, EngineError> {
    matches
        .into_iter()
        .max_by(|a, b| {
            let ka = a.iter().map(|v| v.fclock);
            let kb = b.iter().map(|v| v.fclock);
            ka.cmp(kb)
        })
        .ok_or(EngineError::EmptyMatches)
}

/// Union of the arguments' sClocks. A clock counts only when `S` lists the
/// argument's sender as a carrier of that source, so a clock left over from
/// a removed dependency is dropped. Overlapping keys must agree.
pub fn merge_sclocks(
    combo: &[PropagationValue],
    routing: &BTreeMap<NodeId, BTreeSet<NodeId>>,
) -> Result<SourceClocks, EngineError> {
    let mut merged = SourceClocks::new();
    for arg in combo {
        for (s, c) in &arg.sclocks {
            if !routing.get(s).is_some_and(|carriers| carriers.contains(&arg.from)) {
                continue;
            }
            match merged.get(s) {
                Some(prev) if prev != c => {
                    return Err(EngineError::InconsistentOverlap { source_node: s.clone(), a: *prev, b: *c })
                }
                _ => {
                    merged.insert(s.clone(), *c);
                }
            }
        }
    }
    Ok(merged)
}

impl NodeState {
    /// Pairwise shared sources between predecessors `i < j` (by index into
    /// the canonical predecessor list).
    fn shared_sources(&self, preds: &[&NodeId]) -> Vec<Vec<Vec<&NodeId>>> {
        let n = preds.len();
        let mut shared = vec![vec![Vec::new(); n]; n];
        for (s, carriers) in &self.routing {
            for i in 0..n {
                if !carriers.contains(preds[i]) {
                    continue;
                }
                for j in (i + 1)..n {
                    if carriers.contains(preds[j]) {
                        shared[i][j].push(s);
                    }
                }
            }
        }
        shared
    }

    /// Finds the lexicographically greatest glitch-free combination pinned at
    /// `pinned` by depth-first search over descending fClocks, pruning on
    /// pairwise disagreement. Equivalent to filtering the full cross product.
    pub fn find_last_match(&self, pinned: &PropagationValue) -> Result<Option<Combination>, EngineError> {
        let preds: Vec<&NodeId> = self.dp.iter().collect();
        let mut choices: Vec<Vec<&PropagationValue>> = Vec::with_capacity(preds.len());
        for p in &preds {
            if **p == pinned.from {
                choices.push(vec![pinned]);
            } else {
                match self.inputs.get(*p) {
                    Some(seq) if !seq.is_empty() => choices.push(seq.iter().rev().collect()),
                    _ => return Ok(None),
                }
            }
        }
        let shared = self.shared_sources(&preds);
        let mut picked: Vec<&PropagationValue> = Vec::with_capacity(preds.len());
        let mut cursor: Vec<usize> = vec![0];
        let mut visited: u64 = 0;
        while let Some(&idx) = cursor.last() {
            let level = cursor.len() - 1;
            if level == preds.len() {
                return Ok(Some(picked.into_iter().cloned().collect()));
            }
            if idx >= choices[level].len() {
                cursor.pop();
                if picked.pop().is_some() {
                    *cursor.last_mut().unwrap() += 1;
                }
                continue;
            }
            visited += 1;
            if visited > self.config.search_budget {
                return Err(EngineError::CombinationCapExceeded { node: self.id.clone(), budget: self.config.search_budget });
            }
            let cand = choices[level][idx];
            let ok = picked.iter().enumerate().all(|(i, prev)| shared[i][level].iter().all(|s| agree(prev, cand, s)));
            if ok {
                picked.push(cand);
                cursor.push(0);
            } else {
                *cursor.last_mut().unwrap() += 1;
            }
        }
        Ok(None)
    }

    /// The change handler: store `v_new` and try to update.
    pub fn handle_change(&mut self, v_new: PropagationValue, ctx: &mut Ctx<Message>) -> Result<Option<PropagationValue>, EngineError> {
        if !self.explored {
            return Err(EngineError::BarrierNotPassed(self.id.clone()));
        }
        if !self.dp.contains(&v_new.from) {
            return Err(EngineError::UnknownPredecessor { node: self.id.clone(), pred: v_new.from.clone() });
        }
        self.store_input(v_new.clone())?;
        self.try_update(&v_new, ctx)
    }

    /// Steps 2-13 of the change handler for a value already in `I`.
    pub(crate) fn try_update(&mut self, pinned: &PropagationValue, ctx: &mut Ctx<Message>) -> Result<Option<PropagationValue>, EngineError> {
        let Some(last_match) = self.find_last_match(pinned)? else {
            return Ok(None);
        };
        let args: Vec<i64> = last_match.iter().map(|v| v.value).collect();
        let sclocks = merge_sclocks(&last_match, &self.routing)?;
        self.clock += 1;
        let prop = PropagationValue::new(self.id.clone(), self.config.update.apply(&args), sclocks, self.clock);
        self.last_prop = Some(prop.clone());
        ctx.charge(self.config.cost);
        ctx.record(EventKind::Update(UpdateRecord {
            args: last_match.clone(),
            result: prop.clone(),
            trigger: Some(pinned.from.clone()),
            cost: self.config.cost,
        }));
        for succ in &self.ds {
            ctx.send(succ, Message::Change { value: prop.clone() });
        }
        self.prune_stale(&last_match, ctx);
        Ok(Some(prop))
    }

    /// Drops, per argument `(f, _, _, fc)`, the values of `I.f` older than `fc`.
    pub fn prune_stale(&mut self, last_match: &[PropagationValue], ctx: &mut Ctx<Message>) {
        for arg in last_match {
            let Some(seq) = self.inputs.get_mut(&arg.from) else { continue };
            let removed: Vec<u64> = seq.iter().filter(|v| v.fclock < arg.fclock).map(|v| v.fclock).collect();
            seq.retain(|v| v.fclock >= arg.fclock);
            ctx.record(EventKind::Prune { pred: arg.from.clone(), below: arg.fclock, removed });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::NodeConfig;
    use crate::ids::nid;
    use crate::value::UpdateFn;

    fn pv(from: &str, value: i64, clocks: &[(&str, u64)], fclock: u64) -> PropagationValue {
        PropagationValue::new(nid(from), value, clocks.iter().map(|(s, c)| (nid(s), *c)).collect(), fclock)
    }

    fn routing(entries: &[(&str, &[&str])]) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
        entries.iter().map(|(s, ps)| (nid(s), ps.iter().map(|p| nid(p)).collect())).collect()
    }

    /// E of the two-source diamond after exploration, with I.C and I.D given.
    fn node_e(ic: Vec<PropagationValue>, id: Vec<PropagationValue>) -> NodeState {
        let mut e = NodeState::new(
            nid("E"),
            [nid("C"), nid("D")].into_iter().collect(),
            BTreeSet::new(),
            NodeConfig::new(UpdateFn::Sum, 10),
        );
        e.inputs.insert(nid("C"), ic);
        e.inputs.insert(nid("D"), id);
        e.routing = routing(&[("A", &["C", "D"]), ("B", &["C", "D"])]);
        e.explored = true;
        e
    }

    #[test]
    fn two_candidates_at_t5() {
        let c0 = pv("C", 8, &[("A", 0), ("B", 0)], 0);
        let c1 = pv("C", 10, &[("A", 1), ("B", 0)], 1);
        let d0 = pv("D", 2, &[("A", 0), ("B", 0)], 0);
        let d1 = pv("D", 5, &[("A", 0), ("B", 1)], 1);
        let e = node_e(vec![c0, c1], vec![d0, d1.clone()]);
        let combos = candidate_combinations(&e, &d1);
        assert_eq!(combos.len(), 2);
        assert!(glitch_free_filter(combos, &e.routing).is_empty());
    }

    #[test]
    fn three_candidates_at_t9() {
        let c1 = pv("C", 10, &[("A", 1), ("B", 0)], 1);
        let c2 = pv("C", 7, &[("A", 1), ("B", 1)], 2);
        let d = vec![
            pv("D", 2, &[("A", 0), ("B", 0)], 0),
            pv("D", 5, &[("A", 0), ("B", 1)], 1),
            pv("D", 7, &[("A", 1), ("B", 1)], 2),
        ];
        let e = node_e(vec![c1, c2.clone()], d);
        let combos = candidate_combinations(&e, &c2);
        assert_eq!(combos.len(), 3);
        let matches = glitch_free_filter(combos, &e.routing);
        assert_eq!(matches.len(), 1);
        let best = select_last_match(matches).unwrap();
        assert_eq!(best[1].value, 7);
        assert_eq!(merge_sclocks(&best, &e.routing).unwrap(), [(nid("A"), 1), (nid("B"), 1)].into_iter().collect());
    }

    #[test]
    fn unequal_a_clock_is_rejected() {
        let r = routing(&[("A", &["C", "D"]), ("B", &["C", "D"])]);
        let combo = vec![pv("C", 10, &[("A", 1), ("B", 0)], 1), pv("D", 2, &[("A", 0), ("B", 0)], 0)];
        assert!(glitch_free_filter(vec![combo], &r).is_empty());
    }

    #[test]
    fn disjoint_sources_are_unconstrained() {
        let r = routing(&[("A", &["A"]), ("B", &["B"])]);
        let combo = vec![pv("A", 7, &[("A", 1)], 1), pv("B", 3, &[("B", 0)], 0)];
        assert_eq!(glitch_free_filter(vec![combo.clone()], &r).len(), 1);
        assert_eq!(merge_sclocks(&combo, &r).unwrap(), [(nid("A"), 1), (nid("B"), 0)].into_iter().collect());
    }

    #[test]
    fn single_predecessor_has_one_candidate() {
        let mut n = NodeState::new(nid("X"), [nid("A")].into_iter().collect(), BTreeSet::new(), NodeConfig::default());
        n.inputs.insert(nid("A"), vec![pv("A", 1, &[("A", 0)], 0)]);
        let v = pv("A", 2, &[("A", 1)], 1);
        assert_eq!(candidate_combinations(&n, &v), vec![vec![v]]);
    }

    #[test]
    fn select_prefers_higher_fclock() {
        let a = vec![pv("C", 0, &[], 3), pv("D", 0, &[], 1)];
        let b = vec![pv("C", 0, &[], 3), pv("D", 0, &[], 2)];
        assert_eq!(select_last_match(vec![a, b.clone()]).unwrap(), b);
        assert_eq!(select_last_match(Vec::new()), Err(EngineError::EmptyMatches));
    }

    #[test]
    fn overlap_disagreement_is_reported() {
        let r = routing(&[("A", &["C", "D"])]);
        let combo = vec![pv("C", 0, &[("A", 1)], 1), pv("D", 0, &[("A", 2)], 1)];
        assert!(matches!(merge_sclocks(&combo, &r), Err(EngineError::InconsistentOverlap { .. })));
    }

    #[test]
    fn search_matches_reference_on_t9() {
        let c2 = pv("C", 7, &[("A", 1), ("B", 1)], 2);
        let e = node_e(
            vec![pv("C", 10, &[("A", 1), ("B", 0)], 1), c2.clone()],
            vec![pv("D", 2, &[("A", 0), ("B", 0)], 0), pv("D", 7, &[("A", 1), ("B", 1)], 2)],
        );
        let fast = e.find_last_match(&c2).unwrap().unwrap();
        let slow = select_last_match(glitch_free_filter(candidate_combinations(&e, &c2), &e.routing)).unwrap();
        assert_eq!(fast, slow);
    }

    #[test]
    fn search_budget_is_enforced() {
        let mut e = node_e(
            (0..50).map(|i| pv("C", 0, &[("A", i)], i)).collect(),
            (0..50).map(|i| pv("D", 0, &[("A", 100 + i)], i)).collect(),
        );
        e.config.search_budget = 10;
        let v = pv("C", 0, &[("A", 99)], 99);
        e.inputs.get_mut(&nid("C")).unwrap().push(v.clone());
        assert!(matches!(e.find_last_match(&v), Err(EngineError::CombinationCapExceeded { .. })));
    }

    #[test]
    fn change_before_exploration_is_an_error() {
        let mut e = node_e(Vec::new(), Vec::new());
        e.explored = false;
        let mut ctx = Ctx::new(nid("E"), 0);
        assert!(matches!(
            e.handle_change(pv("C", 1, &[], 1), &mut ctx),
            Err(EngineError::BarrierNotPassed(_))
        ));
    }

    #[test]
    fn prune_keeps_the_used_value() {
        let mut e = node_e(
            vec![pv("C", 0, &[], 0), pv("C", 0, &[], 1), pv("C", 0, &[], 2)],
            vec![pv("D", 0, &[], 0)],
        );
        let mut ctx = Ctx::new(nid("E"), 0);
        e.prune_stale(&[pv("C", 0, &[], 1), pv("D", 0, &[], 0)], &mut ctx);
        let left: Vec<u64> = e.inputs[&nid("C")].iter().map(|v| v.fclock).collect();
        assert_eq!(left, vec![1, 2]);
        let prunes: Vec<_> = ctx.events().collect();
        assert_eq!(prunes.len(), 2);
        assert_eq!(
            prunes[0],
            &EventKind::Prune { pred: nid("C"), below: 1, removed: vec![0] }
        );
        assert_eq!(prunes[1], &EventKind::Prune { pred: nid("D"), below: 0, removed: vec![] });
    }
}
