//! CSV result files.
//!
//! `aggregate.csv` columns:
//! `model_size,error_rate,split,method,n_scenarios,mean,std,p_value`, one row
//! per summary cell. `split` is `train`, `test` or `mia`; `p_value` is empty
//! when the cell has fewer than five scenarios.
//!
//! `scenarios.csv` holds one row per scenario, ascending by baseline test
//! accuracy, with the columns of [`SCENARIO_HEADER`]. `timings.csv` carries the
//! wall-clock seconds in the same row order; it is the only output that varies
//! between identical runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::aggregate::{AggregateReport, AggregateRow};
use super::scenario::ScenarioResult;
use crate::error::{Error, Result};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const SCENARIOS_FILE: &str = "scenarios.csv";
pub const TIMINGS_FILE: &str = "timings.csv";

const AGGREGATE_HEADER: [&str; 8] = [
    "model_size",
    "error_rate",
    "split",
    "method",
    "n_scenarios",
    "mean",
    "std",
    "p_value",
];

pub const SCENARIO_HEADER: [&str; 24] = [
    "model_size",
    "error_rate",
    "seed",
    "n_train",
    "n_test",
    "forget_size",
    "baseline_train_acc",
    "baseline_test_acc",
    "baseline_mia",
    "retrain_train_acc",
    "retrain_test_acc",
    "retrain_mia",
    "finetune_train_acc",
    "finetune_test_acc",
    "finetune_mia",
    "assd_train_acc",
    "assd_test_acc",
    "assd_mia",
    "assd_minus_baseline_test",
    "percentile_p",
    "chosen_alpha",
    "dampened_count",
    "dampened_fraction",
    "audit_forget_rows_seen",
];

const TIMINGS_HEADER: [&str; 9] = [
    "model_size",
    "error_rate",
    "seed",
    "baseline",
    "retrain",
    "finetune",
    "importances_full",
    "importances_forget",
    "assd",
];

/// Flat per-scenario record as stored in `scenarios.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub model_size: String,
    pub error_rate: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub forget_size: usize,
    pub baseline_train_acc: f64,
    pub baseline_test_acc: f64,
    pub baseline_mia: Option<f64>,
    pub retrain_train_acc: f64,
    pub retrain_test_acc: f64,
    pub retrain_mia: Option<f64>,
    pub finetune_train_acc: f64,
    pub finetune_test_acc: f64,
    pub finetune_mia: Option<f64>,
    pub assd_train_acc: f64,
    pub assd_test_acc: f64,
    pub assd_mia: Option<f64>,
    pub assd_minus_baseline_test: f64,
    pub percentile_p: f64,
    pub chosen_alpha: Option<f64>,
    pub dampened_count: usize,
    pub dampened_fraction: f64,
    pub audit_forget_rows_seen: usize,
}

impl From<&ScenarioResult> for ScenarioRow {
    fn from(r: &ScenarioResult) -> Self {
        ScenarioRow {
            model_size: r.model_size.clone(),
            error_rate: r.error_rate,
            seed: r.seed,
            n_train: r.n_train,
            n_test: r.n_test,
            forget_size: r.forget_size,
            baseline_train_acc: r.baseline.train_acc,
            baseline_test_acc: r.baseline.test_acc,
            baseline_mia: r.baseline.mia,
            retrain_train_acc: r.retrain.train_acc,
            retrain_test_acc: r.retrain.test_acc,
            retrain_mia: r.retrain.mia,
            finetune_train_acc: r.finetune.train_acc,
            finetune_test_acc: r.finetune.test_acc,
            finetune_mia: r.finetune.mia,
            assd_train_acc: r.assd.train_acc,
            assd_test_acc: r.assd.test_acc,
            assd_mia: r.assd.mia,
            assd_minus_baseline_test: r.assd.test_acc - r.baseline.test_acc,
            percentile_p: r.unlearn_report.percentile_p,
            chosen_alpha: r.unlearn_report.chosen_alpha,
            dampened_count: r.unlearn_report.dampened_count,
            dampened_fraction: r.unlearn_report.dampened_fraction,
            audit_forget_rows_seen: r.audit_forget_rows_seen,
        }
    }
}

#[derive(Debug, Serialize)]
struct TimingRow<'a> {
    model_size: &'a str,
    error_rate: f64,
    seed: u64,
    baseline: f64,
    retrain: f64,
    finetune: f64,
    importances_full: f64,
    importances_forget: f64,
    assd: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportPaths {
    pub aggregate: PathBuf,
    pub scenarios: PathBuf,
    pub timings: PathBuf,
}

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

/// Ascending baseline test accuracy; ties broken by size, rate and seed.
fn plot_order(results: &[ScenarioResult]) -> Vec<&ScenarioResult> {
    let mut sorted: Vec<&ScenarioResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.baseline
            .test_acc
            .total_cmp(&b.baseline.test_acc)
            .then(a.model_size.cmp(&b.model_size))
            .then(a.error_rate.total_cmp(&b.error_rate))
            .then(a.seed.cmp(&b.seed))
    });
    sorted
}

pub fn write_aggregate_csv(report: &AggregateReport, path: &Path) -> Result<()> {
    let mut w = writer(path, &AGGREGATE_HEADER)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scenarios_csv(results: &[ScenarioResult], path: &Path) -> Result<()> {
    let mut w = writer(path, &SCENARIO_HEADER)?;
    for r in plot_order(results) {
        w.serialize(ScenarioRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

fn write_timings_csv(results: &[ScenarioResult], path: &Path) -> Result<()> {
    let mut w = writer(path, &TIMINGS_HEADER)?;
    for r in plot_order(results) {
        let t = &r.wall_times;
        w.serialize(TimingRow {
            model_size: &r.model_size,
            error_rate: r.error_rate,
            seed: r.seed,
            baseline: t.baseline,
            retrain: t.retrain,
            finetune: t.finetune,
            importances_full: t.importances_full,
            importances_forget: t.importances_forget,
            assd: t.assd,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the three result files into `dir`, creating it if needed.
pub fn export_results(report: &AggregateReport, results: &[ScenarioResult], dir: &Path) -> Result<ExportPaths> {
    fs::create_dir_all(dir)?;
    let paths = ExportPaths {
        aggregate: dir.join(AGGREGATE_FILE),
        scenarios: dir.join(SCENARIOS_FILE),
        timings: dir.join(TIMINGS_FILE),
    };
    write_aggregate_csv(report, &paths.aggregate)?;
    write_scenarios_csv(results, &paths.scenarios)?;
    write_timings_csv(results, &paths.timings)?;
    Ok(paths)
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            reason: format!("unexpected header {found:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    read_rows(path, &AGGREGATE_HEADER)
}

pub fn read_scenarios_csv(path: &Path) -> Result<Vec<ScenarioRow>> {
    read_rows(path, &SCENARIO_HEADER)
}
