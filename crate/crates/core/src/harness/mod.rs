//! Scenario model, generators, the simulation driver and benchmark reports.

pub mod bench;
pub mod generate;
pub mod metrics;
pub mod report;
pub mod run;
pub mod scenario;

pub use bench::{BenchMatrix, Cell, CellResult, Summary};
pub use metrics::MetricsReport;
pub use report::Format;
pub use run::{run_scenario, verify_trace, RunError, RunOptions, RunOutcome};
pub use scenario::{Engine, Mode, OpSpec, Scenario, ScenarioError, StepSpec};
