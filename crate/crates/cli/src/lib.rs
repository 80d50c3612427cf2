//! Scenario catalog, audit orchestration and report emission for `rdlab`.

pub mod audits;
pub mod error;
pub mod ops;
pub mod plot;
pub mod report;
pub mod scenario;

pub use audits::{AuditResult, Status};
pub use error::{CliError, CliResult};
pub use plot::{emit_plot_data, PlotKind, Table};
pub use report::{run_plan, run_scenario, write_outputs, ExperimentReport, RunOutput};
pub use scenario::{catalog, AuditId, AuditSpec, Scenario, ScenarioConfig, CATALOG};
