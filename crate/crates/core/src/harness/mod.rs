//! The error-correction study: per-scenario comparison of a baseline, a
//! retrained model, a fine-tuned model and adaptive dampening, aggregated over
//! many seeded scenarios with paired significance tests.

mod aggregate;
mod config;
mod experiment;
mod export;
mod grid;
mod scenario;
pub mod seeds;

pub use aggregate::{aggregate, AggregateReport, AggregateRow, Split};
pub use config::{apply_override, DataSource, ExperimentConfig, StudyConfig};
pub use experiment::{run_experiment, ExperimentOutcome, ExperimentPlan, ScenarioFailure, DEFAULT_RATES};
pub use export::{
    export_results, read_aggregate_csv, read_scenarios_csv, write_aggregate_csv, write_scenarios_csv, ExportPaths,
    ScenarioRow, AGGREGATE_FILE, SCENARIOS_FILE, TIMINGS_FILE,
};
pub use grid::{grid_search, GridPoint, GridResult, SearchGrid};
pub use scenario::{
    run_scenario, Method, MethodMetrics, ScenarioOptions, ScenarioResult, SplitData, WallTimes, DEFAULT_TEST_FRACTION,
};

pub use crate::stats::significance_test;
