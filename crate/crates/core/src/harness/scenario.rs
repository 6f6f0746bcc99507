use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::seeds::{derive_seed, Stream};
use crate::data::{inject_label_errors, RawTable, TabularDataset};
use crate::error::{Error, Result};
use crate::fisher::{compute_importances_with, ImportanceVector};
use crate::mia::evaluate_mia;
use crate::nn::{
    evaluate_accuracy_with, fine_tune, init_model, train, train_observed, ModelSpec, ModelState, TrainConfig,
};
use crate::par::Execution;
use crate::unlearn::{assd_unlearn_with, AssdConfig, UnlearnReport};

/// Fraction of the most recent rows held out as the test set.
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// A temporally split, standardized dataset shared by every scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: TabularDataset,
    pub test: TabularDataset,
}

impl SplitData {
    pub fn from_table(table: &RawTable, test_fraction: f64) -> Result<Self> {
        let (train, test, _) = table.split(test_fraction)?;
        Ok(SplitData { train, test })
    }

    /// Treats every column of `data` as numeric; the z-score is fit on the
    /// training rows only.
    pub fn from_dataset(data: &TabularDataset, test_fraction: f64) -> Result<Self> {
        Self::from_table(&RawTable::from_dataset(data), test_fraction)
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes().max(self.test.num_classes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Baseline,
    Retrain,
    Finetune,
    Assd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Retrain, Method::Finetune, Method::Assd];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Retrain => "retrain",
            Method::Finetune => "finetune",
            Method::Assd => "assd",
        }
    }
}

/// Accuracies are fractions in `[0, 1]`; `mia` is a percentage of forget rows
/// flagged as members and is `None` when there is nothing to forget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub train_acc: f64,
    pub test_acc: f64,
    pub mia: Option<f64>,
}

/// Wall-clock seconds. Not reproducible, so never part of the exported
/// result files that are compared across runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WallTimes {
    pub baseline: f64,
    pub retrain: f64,
    pub finetune: f64,
    pub importances_full: f64,
    pub importances_forget: f64,
    pub assd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub model_size: String,
    pub error_rate: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub forget_size: usize,
    pub baseline: MethodMetrics,
    pub retrain: MethodMetrics,
    pub finetune: MethodMetrics,
    pub assd: MethodMetrics,
    pub unlearn_report: UnlearnReport,
    /// Forget-set rows handed to the retrain loop; always zero.
    pub audit_forget_rows_seen: usize,
    pub wall_times: WallTimes,
}

impl ScenarioResult {
    pub fn method(&self, m: Method) -> &MethodMetrics {
        match m {
            Method::Baseline => &self.baseline,
            Method::Retrain => &self.retrain,
            Method::Finetune => &self.finetune,
            Method::Assd => &self.assd,
        }
    }

    /// Copy with wall times zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> ScenarioResult {
        ScenarioResult {
            wall_times: WallTimes::default(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOptions {
    pub assd: AssdConfig,
    /// Execution of the per-sample loops inside one scenario.
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            assd: AssdConfig::default(),
            exec: Execution::Sequential,
        }
    }
}

fn evaluate(
    model: &ModelState,
    retain: &TabularDataset,
    test: &TabularDataset,
    forget: &TabularDataset,
    mia_seed: u64,
    exec: Execution,
) -> Result<MethodMetrics> {
    let mia = if forget.is_empty() {
        None
    } else {
        Some(evaluate_mia(model, retain, test, forget, mia_seed, exec)?.score)
    };
    Ok(MethodMetrics {
        train_acc: evaluate_accuracy_with(model, retain, exec)?,
        test_acc: evaluate_accuracy_with(model, test, exec)?,
        mia,
    })
}

fn check_finite(seed: u64, name: &str, m: &MethodMetrics) -> Result<()> {
    let ok = m.train_acc.is_finite() && m.test_acc.is_finite() && m.mia.is_none_or(f64::is_finite);
    if ok {
        Ok(())
    } else {
        Err(Error::Scenario {
            seed,
            reason: format!("non-finite metric for {name}: {m:?}"),
        })
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    *slot = start.elapsed().as_secs_f64();
    out
}

/// One error scenario: corrupt `rate` of the training labels, then compare a
/// baseline trained on the corrupted data against retraining on the retained
/// rows, one fine-tuning epoch on the retained rows, and adaptive dampening of
/// the baseline.
///
/// The random streams (label flips, initialization, shuffling, attacker
/// subsampling) are all derived from `seed`, so equal seeds give equal results
/// across rates, model sizes and runs.
pub fn run_scenario(
    data: &SplitData,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    rate: f64,
    seed: u64,
    opts: &ScenarioOptions,
) -> Result<ScenarioResult> {
    spec.validate()?;
    train_cfg.validate()?;
    let exec = opts.exec;
    let (corrupted, scenario) = inject_label_errors(&data.train, rate, derive_seed(seed, Stream::Errors))?;
    let forget_idx = scenario.forget_indices();
    let forget = corrupted.select(forget_idx);
    let retain = corrupted.select(&scenario.retain_indices());
    if retain.is_empty() {
        return Err(Error::Scenario {
            seed,
            reason: "every training row was selected for corruption".into(),
        });
    }
    let test = &data.test;

    let init = init_model(spec, derive_seed(seed, Stream::Init))?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, Stream::Shuffle),
        ..train_cfg.clone()
    };
    let mia_seed = derive_seed(seed, Stream::Attack);
    let mut times = WallTimes::default();

    let baseline = timed(&mut times.baseline, || train(&init, &corrupted, &cfg))?;
    let last_lr = cfg.last_epoch_lr();

    let forget_ids: HashSet<usize> = forget.row_ids.iter().copied().collect();
    let mut seen = 0usize;
    let retrained = timed(&mut times.retrain, || {
        train_observed(&init, &retain, &cfg, &mut |ids| {
            seen += ids.iter().filter(|id| forget_ids.contains(id)).count();
        })
        .map(|(m, _)| m)
    })?;

    let finetuned = timed(&mut times.finetune, || fine_tune(&baseline, &retain, last_lr, &cfg))?;

    let imp_full = timed(&mut times.importances_full, || {
        compute_importances_with(&baseline, &corrupted, exec)
    })?;
    let imp_forget = timed(&mut times.importances_forget, || {
        if forget.is_empty() {
            Ok(ImportanceVector {
                values: vec![0.0; baseline.param_count()],
                sample_count: 0,
                model_fingerprint: imp_full.model_fingerprint.clone(),
            })
        } else {
            compute_importances_with(&baseline, &forget, exec)
        }
    })?;
    let (unlearned, report) = timed(&mut times.assd, || {
        assd_unlearn_with(
            &baseline,
            &imp_full,
            &imp_forget,
            forget.len(),
            corrupted.len(),
            &opts.assd,
        )
    })?;

    let mut metrics = Vec::with_capacity(4);
    for (name, model) in [
        ("baseline", &baseline),
        ("retrain", &retrained),
        ("finetune", &finetuned),
        ("assd", &unlearned),
    ] {
        let m = evaluate(model, &retain, test, &forget, mia_seed, exec)?;
        check_finite(seed, name, &m)?;
        metrics.push(m);
    }
    log::debug!(
        "scenario {} rate {rate} seed {seed}: baseline {:.4} assd {:.4} (dampened {})",
        spec.tag(),
        metrics[0].test_acc,
        metrics[3].test_acc,
        report.dampened_count
    );
    Ok(ScenarioResult {
        model_size: spec.tag(),
        error_rate: rate,
        seed,
        n_train: corrupted.len(),
        n_test: test.len(),
        forget_size: forget.len(),
        baseline: metrics[0],
        retrain: metrics[1],
        finetune: metrics[2],
        assd: metrics[3],
        unlearn_report: report,
        audit_forget_rows_seen: seen,
        wall_times: times,
    })
}
