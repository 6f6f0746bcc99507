use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, AggregateReport};
use super::scenario::{run_scenario, ScenarioOptions, ScenarioResult, SplitData};
use super::seeds::scenario_seed;
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, TrainConfig};
use crate::par::{self, Execution};

/// Error rates of the full study.
pub const DEFAULT_RATES: [f64; 6] = [0.0025, 0.01, 0.025, 0.05, 0.075, 0.10];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub specs: Vec<ModelSpec>,
    pub rates: Vec<f64>,
    pub n_scenarios: usize,
    pub base_seed: u64,
    pub train: TrainConfig,
    pub options: ScenarioOptions,
    /// Scenarios run concurrently; `1` runs them in order on the caller's thread.
    pub workers: usize,
}

impl ExperimentPlan {
    pub fn new(specs: Vec<ModelSpec>, train: TrainConfig) -> Self {
        ExperimentPlan {
            specs,
            rates: DEFAULT_RATES.to_vec(),
            n_scenarios: 100,
            base_seed: 0,
            train,
            options: ScenarioOptions::default(),
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::InvalidArgument("no model sizes given".into()));
        }
        if self.rates.is_empty() {
            return Err(Error::InvalidArgument("no error rates given".into()));
        }
        if let Some(r) = self.rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::InvalidArgument(format!("error rate {r} outside [0, 1)")));
        }
        if self.n_scenarios == 0 {
            return Err(Error::InvalidArgument("n_scenarios must be >= 1".into()));
        }
        for spec in &self.specs {
            spec.validate()?;
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub model_size: String,
    pub error_rate: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    /// Successful scenarios ordered by (model size as planned, rate as
    /// planned, seed).
    pub results: Vec<ScenarioResult>,
    pub failures: Vec<ScenarioFailure>,
    pub report: AggregateReport,
}

struct Job {
    spec: usize,
    rate: f64,
    seed: u64,
}

/// Runs every `(model size, rate, scenario)` combination. Scenario `i` uses
/// seed `base_seed + i` for every size and rate, so cells are paired by seed.
/// Failed scenarios are collected rather than aborting the study.
pub fn run_experiment(data: &SplitData, plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let mut jobs = Vec::with_capacity(plan.specs.len() * plan.rates.len() * plan.n_scenarios);
    for spec in 0..plan.specs.len() {
        for &rate in &plan.rates {
            for i in 0..plan.n_scenarios {
                jobs.push(Job {
                    spec,
                    rate,
                    seed: scenario_seed(plan.base_seed, i),
                });
            }
        }
    }
    log::info!(
        "running {} scenarios ({} sizes x {} rates x {}) on {} worker(s)",
        jobs.len(),
        plan.specs.len(),
        plan.rates.len(),
        plan.n_scenarios,
        plan.workers
    );
    let run = |job: &Job| {
        let spec = &plan.specs[job.spec];
        let out = run_scenario(data, spec, &plan.train, job.rate, job.seed, &plan.options);
        match &out {
            Ok(r) => log::info!(
                "{} rate {} seed {}: baseline {:.4} assd {:.4}",
                r.model_size,
                r.error_rate,
                r.seed,
                r.baseline.test_acc,
                r.assd.test_acc
            ),
            Err(e) => log::warn!("{} rate {} seed {} failed: {e}", spec.tag(), job.rate, job.seed),
        }
        out
    };
    let outcomes = if plan.workers <= 1 {
        jobs.iter().map(run).collect::<Vec<_>>()
    } else {
        par::with_workers(plan.workers, || par::map(&jobs, Execution::Parallel, run))
    };

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (job, out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(r) => results.push(r),
            Err(e) => failures.push(ScenarioFailure {
                model_size: plan.specs[job.spec].tag(),
                error_rate: job.rate,
                seed: job.seed,
                error: e.to_string(),
            }),
        }
    }
    let report = aggregate(&results);
    Ok(ExperimentOutcome {
        results,
        failures,
        report,
    })
}
