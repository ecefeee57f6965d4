//! Scenario orchestration, technique comparison and report output.

pub mod config;
pub mod report;
pub mod scenario;

pub use config::{ScenarioConfig, ScenarioName};
pub use report::{emit_report, render_text_table, ReportFormat};
pub use scenario::{
    build_twin, compare_techniques, obtain_predictor, run_scenario, run_scenario_with, train_policy,
    train_predictor, ScenarioReport, Summary, TechniqueResult, TechniqueStep,
};
