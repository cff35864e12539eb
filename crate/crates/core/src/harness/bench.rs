//! Benchmark matrices: engines × loads × dynamic-op counts × seeds.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::batch;
use crate::transport::{RunStatus, TraceLevel};

use super::generate;
use super::metrics::{mean, MetricsReport};
use super::report::ReportError;
use super::run::{run_scenario, RunError, RunOptions};
use super::scenario::{Engine, Scenario, ScenarioError, TimedOp};

/// A base scenario (which must carry a workload) and the axes to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMatrix {
    pub scenario: Scenario,
    #[serde(default)]
    pub engines: Vec<Engine>,
    #[serde(default)]
    pub loads: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Numbers of generated dependency operations.
    #[serde(default)]
    pub ops: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub engine: Engine,
    pub load: f64,
    pub ops: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub quiescent: bool,
    pub report: MetricsReport,
}

/// Mean and 95% confidence half-width over the seeds of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub engine: String,
    pub load: f64,
    pub ops: usize,
    pub runs: usize,
    pub throughput_mean: f64,
    pub throughput_ci95: f64,
    pub latency_mean: f64,
    pub latency_ci95: f64,
    pub processing_mean: f64,
    pub processing_ci95: f64,
    pub concurrent_interactions_mean: f64,
    pub concurrent_interactions_ci95: f64,
    pub stored_values_max: u64,
}

const AXES: [&str; 4] = ["engines", "loads", "seeds", "ops"];

impl BenchMatrix {
    /// Text form: a scenario plus `engines`, `loads`, `seeds` and `ops`
    /// lines. JSON form: `{"scenario": {...}, "engines": [...], ...}`.
    pub fn parse(text: &str) -> Result<BenchMatrix, ScenarioError> {
        if text.trim_start().starts_with('{') {
            return Ok(serde_json::from_str(text)?);
        }
        let mut m = BenchMatrix { scenario: Scenario::default(), engines: vec![], loads: vec![], seeds: vec![], ops: vec![] };
        let mut rest = String::with_capacity(text.len());
        for (i, raw) in text.lines().enumerate() {
            let toks: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
            match toks.first() {
                Some(k) if AXES.contains(k) => {
                    let err = |t: &str| ScenarioError::Parse { line: i + 1, message: format!("bad {k} entry '{t}'") };
                    for t in &toks[1..] {
                        match *k {
                            "engines" => m.engines.push(t.parse().map_err(|_| err(t))?),
                            "loads" => m.loads.push(t.parse().map_err(|_| err(t))?),
                            "seeds" => m.seeds.push(t.parse().map_err(|_| err(t))?),
                            _ => m.ops.push(t.parse().map_err(|_| err(t))?),
                        }
                    }
                    rest.push('\n');
                }
                _ => {
                    rest.push_str(raw);
                    rest.push('\n');
                }
            }
        }
        m.scenario = Scenario::from_text(&rest)?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<BenchMatrix, ScenarioError> {
        let m = BenchMatrix::parse(&std::fs::read_to_string(path)?)?;
        m.scenario.validate()?;
        if m.scenario.workload.is_none() {
            return Err(ScenarioError::Validation { field: "workload".into(), message: "a bench matrix needs a workload".into() });
        }
        Ok(m)
    }

    /// Cartesian product; an empty axis falls back to the base scenario.
    pub fn cells(&self) -> Vec<Cell> {
        let base_load = self.scenario.workload.as_ref().map_or(0.0, |w| w.rate);
        let engines = if self.engines.is_empty() { vec![self.scenario.engine] } else { self.engines.clone() };
        let loads = if self.loads.is_empty() { vec![base_load] } else { self.loads.clone() };
        let seeds = if self.seeds.is_empty() { vec![self.scenario.seed] } else { self.seeds.clone() };
        let ops = if self.ops.is_empty() { vec![0] } else { self.ops.clone() };
        let mut out = Vec::new();
        for &engine in &engines {
            for &load in &loads {
                for &n in &ops {
                    for &seed in &seeds {
                        out.push(Cell { engine, load, ops: n, seed });
                    }
                }
            }
        }
        out
    }

    /// The concrete scenario of one cell. Generated operations are spread
    /// over the workload duration and come after any listed in the base.
    pub fn scenario_for(&self, cell: &Cell) -> Result<Scenario, ScenarioError> {
        let mut sc = self.scenario.clone();
        sc.engine = cell.engine;
        sc.seed = cell.seed;
        if let Some(w) = sc.workload.as_mut() {
            w.rate = cell.load;
        }
        if cell.ops > 0 {
            let topo = sc.validate()?;
            let span = sc.workload.as_ref().map_or(1000, |w| (w.duration * 1000.0) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(cell.seed.wrapping_add(1));
            for (at, op) in generate::churn_ops(&topo, cell.ops, 0, span, &mut rng)? {
                sc.dynamic_ops.push(TimedOp { at, op });
            }
        }
        Ok(sc)
    }
}

fn run_cell(m: &BenchMatrix, cell: Cell, opts: &RunOptions) -> Result<CellResult, RunError> {
    let sc = m.scenario_for(&cell)?;
    let out = run_scenario(&sc, opts)?;
    Ok(CellResult { cell, quiescent: out.status == RunStatus::Quiescent, report: out.metrics })
}

/// Runs every cell through [`batch::map`]; results keep cell order.
pub fn run_matrix(m: &BenchMatrix, opts: &RunOptions) -> Result<Vec<CellResult>, RunError> {
    let opts = RunOptions { trace_level: TraceLevel::Light, ..opts.clone() };
    batch::map(m.cells(), |c| run_cell(m, c, &opts)).into_iter().collect()
}

/// Same as [`run_matrix`] on the current thread.
pub fn run_matrix_sequential(m: &BenchMatrix, opts: &RunOptions) -> Result<Vec<CellResult>, RunError> {
    let opts = RunOptions { trace_level: TraceLevel::Light, ..opts.clone() };
    batch::seq_map(m.cells(), |c| run_cell(m, c, &opts)).into_iter().collect()
}

/// Half-width of the 95% Student-t interval of the mean; 0 below two samples.
pub fn ci95(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive freedom").inverse_cdf(0.975);
    t * (var / n as f64).sqrt()
}

/// Groups results by engine, load and op count, in first-seen order.
pub fn summarize(results: &[CellResult]) -> Vec<Summary> {
    let mut groups: Vec<(Cell, Vec<&MetricsReport>)> = Vec::new();
    for r in results {
        let key = |c: &Cell| (c.engine, c.load.to_bits(), c.ops);
        match groups.iter_mut().find(|(c, _)| key(c) == key(&r.cell)) {
            Some((_, v)) => v.push(&r.report),
            None => groups.push((r.cell, vec![&r.report])),
        }
    }
    groups
        .into_iter()
        .map(|(cell, reps)| {
            let col = |f: fn(&MetricsReport) -> f64| reps.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let tp = col(|r| r.throughput);
            let lat = col(|r| r.latency_mean);
            let proc_ = col(|r| r.processing_mean);
            let ci = col(|r| r.concurrent_interactions as f64);
            Summary {
                engine: cell.engine.name().into(),
                load: cell.load,
                ops: cell.ops,
                runs: reps.len(),
                throughput_mean: mean(&tp),
                throughput_ci95: ci95(&tp),
                latency_mean: mean(&lat),
                latency_ci95: ci95(&lat),
                processing_mean: mean(&proc_),
                processing_ci95: ci95(&proc_),
                concurrent_interactions_mean: mean(&ci),
                concurrent_interactions_ci95: ci95(&ci),
                stored_values_max: reps.iter().map(|r| r.stored_values_max).max().unwrap_or(0),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(rows: &[Summary], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
