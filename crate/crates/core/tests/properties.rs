use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qprop::graph::Topology;
use qprop::harness::bench::{BenchMatrix, Cell};
use qprop::harness::generate::random_dag;
use qprop::harness::{run_scenario, Engine, RunOptions, RunOutcome, Scenario};
use qprop::oracles::check_exploration;

fn render(topo: &Topology) -> String {
    let nodes: Vec<String> = topo.nodes().iter().map(|n| n.to_string()).collect();
    let edges: Vec<String> = topo.edges().iter().map(|(a, b)| format!("{a}->{b}")).collect();
    let mut out = format!("nodes {}\n", nodes.join(" "));
    if !edges.is_empty() {
        out.push_str(&format!("edges {}\n", edges.join(" ")));
    }
    out
}

fn random_run(engine: &str, topo: &Topology, latency: u64, rate: u32, seed: u64) -> RunOutcome {
    let text = format!(
        "engine {engine}\n{}latency {latency}\nscheduler random\nseed {seed}\nworkload rate {rate} duration 1 mode sourceCount\n",
        render(topo)
    );
    let sc = Scenario::from_text(&text).expect("scenario");
    run_scenario(&sc, &RunOptions::default()).expect("run")
}

/// Random dependency additions and removals, each valid on the topology the
/// previous ones leave behind. Initial sources never gain predecessors, so
/// the workload can keep emitting on them.
fn random_ops(topo: &Topology, count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_sources = topo.sources();
    let mut plan = topo.clone();
    let mut out = Vec::new();
    for k in 0..count {
        let at = 50 + k as u64 * 850 / count as u64;
        let edges = plan.edges();
        if rng.gen_bool(0.5) && !edges.is_empty() {
            let (pred, node) = edges.choose(&mut rng).unwrap().clone();
            plan.remove_edge(&pred, &node).unwrap();
            out.push(format!("at {at} op rem_dep {node} {pred}"));
            continue;
        }
        let nodes: Vec<_> = plan.nodes().iter().cloned().collect();
        let mut pairs = Vec::new();
        for node in nodes.iter().filter(|n| !initial_sources.contains(n)) {
            let below = plan.descendants(node).unwrap();
            for pred in &nodes {
                if pred != node && !below.contains(pred) && !plan.has_edge(pred, node) {
                    pairs.push((node.clone(), pred.clone()));
                }
            }
        }
        if let Some((node, pred)) = pairs.choose(&mut rng) {
            plan.add_edge(pred, node).unwrap();
            out.push(format!("at {at} op add_dep {node} {pred}"));
        }
    }
    out
}

fn assert_verdicts(out: &RunOutcome) -> Result<(), TestCaseError> {
    prop_assert!(out.quiescent(), "budget exhausted");
    for v in out.verify().expect("trace") {
        prop_assert!(v.holds, "{} violated: {:?}", v.property, v.detail);
    }
    Ok(())
}

fn dag() -> impl Strategy<Value = Topology> {
    (2usize..=9, 0.15f64..0.7, any::<u64>()).prop_map(|(n, d, s)| random_dag(n, d, s))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn qprop_runs_satisfy_every_oracle(topo in dag(), latency in 0u64..4, rate in 5u32..60, seed in any::<u64>()) {
        let out = random_run("qprop", &topo, latency, rate, seed);
        assert_verdicts(&out)?;
        prop_assert!(check_exploration(&topo, &out.tables).holds);
    }

    #[test]
    fn central_runs_are_glitch_free_and_consistent(topo in dag(), latency in 0u64..3, seed in any::<u64>()) {
        let out = random_run("central", &topo, latency, 20, seed);
        assert_verdicts(&out)?;
    }

    #[test]
    fn churn_keeps_every_oracle(topo in dag(), ops in 1usize..8, latency in 0u64..4, rate in 10u32..80, seed in 0u64..1000) {
        prop_assume!(topo.sources().len() < topo.len());
        let text = format!("engine qprop_d\n{}latency {latency}\nworkload rate {rate} duration 1\n", render(&topo));
        let m = BenchMatrix::parse(&text).expect("matrix");
        let sc = match m.scenario_for(&Cell { engine: Engine::QpropD, load: rate as f64, ops, seed }) {
            Ok(sc) => sc,
            Err(_) => return Ok(()),
        };
        let out = run_scenario(&sc, &RunOptions::default()).expect("run");
        assert_verdicts(&out)?;
    }

    #[test]
    fn arbitrary_dependency_changes_keep_every_oracle(
        topo in dag(),
        ops in 1usize..10,
        latency in 0u64..4,
        rate in 10u32..80,
        random in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let sources: Vec<String> = topo.sources().iter().map(|s| s.to_string()).collect();
        let mut text = format!(
            "engine qprop_d\n{}latency {latency}\nseed {seed}\nworkload rate {rate} duration 1 sources {}\n",
            render(&topo),
            sources.join(" ")
        );
        if random {
            text.push_str("scheduler random\n");
        }
        for line in random_ops(&topo, ops, seed) {
            text.push_str(&line);
            text.push('\n');
        }
        let sc = Scenario::from_text(&text).expect("scenario");
        let out = run_scenario(&sc, &RunOptions::default()).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        assert_verdicts(&out).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
    }

    #[test]
    fn node_joins_and_departures_keep_every_oracle(topo in dag(), latency in 0u64..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources = topo.sources();
        let nodes: Vec<_> = topo.nodes().iter().cloned().collect();
        let k = rng.gen_range(1..=2);
        let preds: Vec<_> = nodes.choose_multiple(&mut rng, k).cloned().collect();
        let above: std::collections::BTreeSet<_> =
            preds.iter().flat_map(|p| topo.ancestors(p).unwrap()).chain(preds.iter().cloned()).collect();
        let succ = nodes.iter().filter(|n| !above.contains(*n) && !sources.contains(*n)).collect::<Vec<_>>().choose(&mut rng).map(|n| (*n).clone());
        let mut ops = format!("at 200 op add_node X preds {}", preds.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" "));
        if let Some(succ) = &succ {
            ops.push_str(&format!(" succs {succ}"));
        }
        let inner: Vec<_> = nodes.iter().filter(|n| !sources.contains(*n)).collect();
        if let Some(gone) = inner.choose(&mut rng) {
            ops.push_str(&format!("\nat 600 op rem_node {gone}"));
        }
        let text = format!(
            "engine qprop_d\n{}latency {latency}\nworkload rate 40 duration 1 sources {}\n{ops}\n",
            render(&topo),
            sources.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
        );
        let sc = Scenario::from_text(&text).expect("scenario");
        let out = run_scenario(&sc, &RunOptions::default()).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        assert_verdicts(&out).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
    }

    #[test]
    fn topological_order_respects_edges(topo in dag()) {
        let order = topo.topological_order();
        prop_assert_eq!(order.len(), topo.len());
        let pos = |n: &qprop::ids::NodeId| order.iter().position(|x| x == n).unwrap();
        for (a, b) in topo.edges() {
            prop_assert!(pos(&a) < pos(&b));
        }
    }

    #[test]
    fn reachability_matches_ancestors(topo in dag()) {
        for x in topo.nodes() {
            let anc = topo.ancestors(x).unwrap();
            for y in topo.nodes() {
                if x != y {
                    prop_assert_eq!(topo.reaches(y, x).unwrap(), anc.contains(y));
                }
            }
        }
    }
}
