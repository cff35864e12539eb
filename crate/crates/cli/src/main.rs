//! `qprop`: run, verify, benchmark and trace propagation scenarios.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use qprop::harness::bench::{self, BenchMatrix};
use qprop::harness::report::{self, Format};
use qprop::harness::{run_scenario, verify_trace, Mode, RunError, RunOptions, RunOutcome, Scenario};
use qprop::oracles::Verdict;
use qprop::transport::{RunStatus, Trace, TraceEvent};

const EXIT_VERIFY: u8 = 1;
const EXIT_SCENARIO: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "qprop", version, about = "Deterministic simulator for glitch-free distributed propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and report its metrics.
    Run {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check a scenario run, or a stored JSON-lines trace, against the oracles.
    Verify {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every cell of a benchmark matrix.
    Bench {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario and dump its trace as JSON lines.
    Trace {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Overrides the scenario seed (and, for bench, the seed axis).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// sinkCount or sourceCount.
    #[arg(long)]
    mode: Option<Mode>,
    /// Directory for reports and traces.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions { seed: self.seed, max_steps: self.max_steps, mode: self.mode, ..RunOptions::default() }
    }
}

/// A failure with a chosen exit status.
struct Exit(u8, anyhow::Error);

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Exit {
        Exit(EXIT_SCENARIO, e)
    }
}

fn run_error(e: RunError) -> Exit {
    Exit(EXIT_SCENARIO, e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { file, common } => cmd_run(&file, &common),
        Command::Verify { file, common } => cmd_verify(&file, &common),
        Command::Bench { file, common } => cmd_bench(&file, &common),
        Command::Trace { file, common } => cmd_trace(&file, &common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn load(file: &Path) -> Result<Scenario, Exit> {
    Scenario::load(file).with_context(|| format!("loading {}", file.display())).map_err(Exit::from)
}

fn stem(file: &Path) -> String {
    file.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned())
}

fn out_dir(common: &Common) -> Result<Option<&Path>> {
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(common.out.as_deref())
}

fn print_outcome(sc: &Scenario, out: &RunOutcome) {
    let status = match out.status {
        RunStatus::Quiescent => "quiescent",
        RunStatus::BudgetExhausted => "step budget exhausted",
    };
    let name = if sc.name.is_empty() { "scenario" } else { sc.name.as_str() };
    println!("{name}: engine {} seed {}, {status}", out.engine.name(), out.seed);
    for (node, v) in &out.final_values {
        let clocks: Vec<String> = v.sclocks.iter().map(|(s, c)| format!("{s}:{c}")).collect();
        println!("  {node} = {} {{{}}} updates {}", v.value, clocks.join(", "), out.updates_at(node));
    }
    let m = &out.metrics;
    println!(
        "  throughput {:.2}/s  latency {:.2} (p95 {:.0})  processing {:.2} (p95 {:.0})  stored max {}  concurrent {}",
        m.throughput, m.latency_mean, m.latency_p95, m.processing_mean, m.processing_p95, m.stored_values_max, m.concurrent_interactions
    );
    if let Some(stall) = &out.stall {
        for s in &stall.suspects {
            eprintln!("stall: {} received {} changes without updating", s.node, s.deliveries);
        }
    }
}

fn budget_code(out: &RunOutcome) -> u8 {
    if out.status == RunStatus::BudgetExhausted {
        EXIT_BUDGET
    } else {
        0
    }
}

fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    trace.to_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_run(file: &Path, common: &Common) -> Result<u8, Exit> {
    let sc = load(file)?;
    let out = run_scenario(&sc, &common.options()).map_err(run_error)?;
    print_outcome(&sc, &out);
    if let Some(dir) = out_dir(common)? {
        let name = stem(file);
        let path = dir.join(format!("{name}.{}", common.format.extension()));
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        report::write(std::slice::from_ref(&out.metrics), common.format, BufWriter::new(f)).map_err(anyhow::Error::from)?;
        write_trace(&out.trace, &dir.join(format!("{name}.trace.jsonl")))?;
    }
    Ok(budget_code(&out))
}

/// A stored trace starts with a JSON object that parses as a trace event.
fn looks_like_trace(file: &Path) -> Result<bool> {
    let f = File::open(file).with_context(|| format!("opening {}", file.display()))?;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        return Ok(serde_json::from_str::<TraceEvent>(&line).is_ok());
    }
    Ok(false)
}

fn report_verdicts(verdicts: &[Verdict]) -> bool {
    let mut ok = true;
    for v in verdicts {
        println!("{} {}", if v.holds { "PASS" } else { "FAIL" }, v.property);
        if !v.holds {
            ok = false;
            if let Some(d) = &v.detail {
                println!("  {d}");
            }
            for e in &v.witness {
                println!("  witness: {}", serde_json::to_string(e).unwrap_or_default());
            }
        }
    }
    ok
}

fn cmd_verify(file: &Path, common: &Common) -> Result<u8, Exit> {
    if looks_like_trace(file)? {
        let f = File::open(file).with_context(|| format!("opening {}", file.display()))?;
        let trace = Trace::from_jsonl(BufReader::new(f)).map_err(|e| Exit(EXIT_SCENARIO, e.into()))?;
        let verdicts = verify_trace(&trace).map_err(|e| Exit(EXIT_VERIFY, e.into()))?;
        return Ok(if report_verdicts(&verdicts) { 0 } else { EXIT_VERIFY });
    }
    let sc = load(file)?;
    let out = run_scenario(&sc, &common.options()).map_err(run_error)?;
    let verdicts = out.verify().map_err(|e| Exit(EXIT_VERIFY, e.into()))?;
    if !report_verdicts(&verdicts) {
        return Ok(EXIT_VERIFY);
    }
    if let Some(stall) = &out.stall {
        println!("step budget exhausted; consistency not checked");
        for s in &stall.suspects {
            println!("  stall suspect {} ({} changes without an update)", s.node, s.deliveries);
        }
    }
    Ok(budget_code(&out))
}

fn cmd_bench(file: &Path, common: &Common) -> Result<u8, Exit> {
    let mut m = BenchMatrix::load(file).with_context(|| format!("loading {}", file.display()))?;
    if let Some(seed) = common.seed {
        m.seeds = vec![seed];
    }
    let opts = RunOptions { seed: None, ..common.options() };
    let results = bench::run_matrix(&m, &opts).map_err(run_error)?;
    let reports: Vec<_> = results.iter().map(|r| r.report.clone()).collect();
    let summary = bench::summarize(&results);
    let stdout = io::stdout();
    match out_dir(common)? {
        Some(dir) => {
            let name = stem(file);
            let path = dir.join(format!("{name}.{}", common.format.extension()));
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            report::write(&reports, common.format, BufWriter::new(f)).map_err(anyhow::Error::from)?;
            let path = dir.join(format!("{name}.summary.csv"));
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            bench::write_summary_csv(&summary, BufWriter::new(f)).map_err(anyhow::Error::from)?;
        }
        None => report::write(&reports, common.format, stdout.lock()).map_err(anyhow::Error::from)?,
    }
    for s in &summary {
        eprintln!(
            "{:<8} load {:>6.1} ops {:>3}: throughput {:.2} ± {:.2}, concurrent {:.1}",
            s.engine, s.load, s.ops, s.throughput_mean, s.throughput_ci95, s.concurrent_interactions_mean
        );
    }
    let exhausted = results.iter().filter(|r| !r.quiescent).count();
    if exhausted > 0 {
        eprintln!("{exhausted} cell(s) ran out of steps");
        return Ok(EXIT_BUDGET);
    }
    Ok(0)
}

fn cmd_trace(file: &Path, common: &Common) -> Result<u8, Exit> {
    let sc = load(file)?;
    let out = run_scenario(&sc, &common.options()).map_err(run_error)?;
    match out_dir(common)? {
        Some(dir) => write_trace(&out.trace, &dir.join(format!("{}.trace.jsonl", stem(file))))?,
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            out.trace.to_jsonl(&mut w).map_err(anyhow::Error::from)?;
            w.flush().map_err(anyhow::Error::from)?;
        }
    }
    Ok(budget_code(&out))
}
