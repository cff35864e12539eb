//! Benchmark metrics computed from a recorded trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::Topology;
use crate::ids::NodeId;
use crate::oracles::{count_concurrent_interactions, Reachability};
use crate::transport::{Trace, TICKS_PER_SECOND};

/// One benchmark cell. The first ten fields form the CSV schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub engine: String,
    pub seed: u64,
    /// Offered requests per simulated second.
    pub load: f64,
    /// Processed requests per simulated second.
    pub throughput: f64,
    pub latency_mean: f64,
    pub latency_p95: f64,
    pub processing_mean: f64,
    pub processing_p95: f64,
    pub stored_values_max: u64,
    pub concurrent_interactions: i64,
    #[serde(default)]
    pub stored_values_mean: f64,
    #[serde(default)]
    pub emissions: u64,
    #[serde(default)]
    pub sink_updates: u64,
    /// Ticks from workload start to completion.
    #[serde(default)]
    pub elapsed: u64,
}

/// Sample mean, 0 when empty.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Nearest-rank percentile, 0 when empty.
pub fn percentile(xs: &[f64], p: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per emission and reachable sink: ticks from the emission (latency) and
/// from the client request (processing time) to the completion of the first
/// sink update reflecting it. Emissions no sink reflected are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Delays {
    pub latency: Vec<f64>,
    pub processing: Vec<f64>,
}

pub fn delays(trace: &Trace, topology: &Topology) -> Delays {
    let reach = Reachability::new(topology);
    let sinks = reach.sinks();
    // (sink, source) -> completions with the running maximum clock reflected.
    let mut seen: BTreeMap<(NodeId, NodeId), Vec<(u64, u64)>> = BTreeMap::new();
    for (e, u) in trace.updates() {
        if !sinks.contains(&e.node) {
            continue;
        }
        for (s, c) in &u.result.sclocks {
            let list = seen.entry((e.node.clone(), s.clone())).or_default();
            let best = list.last().map_or(*c, |(m, _)| (*m).max(*c));
            list.push((best, e.time + u.cost));
        }
    }
    let mut out = Delays::default();
    for (e, v, requested_at) in trace.emissions() {
        let k = v.fclock;
        for t in &sinks {
            if !reach.feeds(&e.node, t) || &e.node == t {
                continue;
            }
            let Some(list) = seen.get(&(t.clone(), e.node.clone())) else { continue };
            let i = list.partition_point(|(m, _)| *m < k);
            if let Some((_, done)) = list.get(i) {
                out.latency.push(done.saturating_sub(e.time) as f64);
                out.processing.push(done.saturating_sub(requested_at) as f64);
            }
        }
    }
    out
}

/// Fills the trace-derived fields of a report.
pub fn from_trace(trace: &Trace, topology: &Topology, report: &mut MetricsReport) {
    let d = delays(trace, topology);
    report.latency_mean = mean(&d.latency);
    report.latency_p95 = percentile(&d.latency, 95.0);
    report.processing_mean = mean(&d.processing);
    report.processing_p95 = percentile(&d.processing, 95.0);
    report.concurrent_interactions = count_concurrent_interactions(trace, topology);
    report.emissions = trace.emissions().count() as u64;
    let sinks = topology.sinks();
    report.sink_updates = trace.updates().filter(|(e, _)| sinks.contains(&e.node)).count() as u64;
}

/// Requests per simulated second.
pub fn per_second(count: f64, ticks: u64) -> f64 {
    if ticks == 0 {
        0.0
    } else {
        count * TICKS_PER_SECOND as f64 / ticks as f64
    }
}
