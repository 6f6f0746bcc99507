use serde::{Deserialize, Serialize};

use super::scenario::{Method, ScenarioResult};
use crate::stats::{mean, significance_test, std_dev};

/// Which quantity a summary row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Accuracy on the retained training rows (clean labels).
    Train,
    Test,
    /// Membership-inference score on the forget set.
    Mia,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Mia];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Mia => "mia",
        }
    }

    pub fn value(self, r: &ScenarioResult, m: Method) -> Option<f64> {
        let metrics = r.method(m);
        match self {
            Split::Train => Some(metrics.train_acc),
            Split::Test => Some(metrics.test_acc),
            Split::Mia => metrics.mia,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model_size: String,
    pub error_rate: f64,
    pub split: Split,
    pub method: Method,
    pub n_scenarios: usize,
    pub mean: f64,
    /// Population standard deviation across scenarios.
    pub std: f64,
    /// Paired baseline-vs-assd test for this `(model_size, error_rate,
    /// split)`; `None` with fewer than five scenarios.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
}

impl AggregateReport {
    pub fn get(&self, model_size: &str, error_rate: f64, split: Split, method: Method) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| {
            r.model_size == model_size && r.error_rate == error_rate && r.split == split && r.method == method
        })
    }
}

/// Groups results by `(model_size, error_rate)` and summarizes every split
/// and method. Within a group results are ordered by seed before reducing, so
/// the report does not depend on the order of `results`.
pub fn aggregate(results: &[ScenarioResult]) -> AggregateReport {
    let mut sorted: Vec<&ScenarioResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.model_size
            .cmp(&b.model_size)
            .then(a.error_rate.total_cmp(&b.error_rate))
            .then(a.seed.cmp(&b.seed))
    });
    let mut rows = Vec::new();
    for group in sorted.chunk_by(|a, b| a.model_size == b.model_size && a.error_rate == b.error_rate) {
        let head = group[0];
        for split in Split::ALL {
            let column = |m: Method| -> Option<Vec<f64>> { group.iter().map(|r| split.value(r, m)).collect() };
            let p_value = match (column(Method::Baseline), column(Method::Assd)) {
                (Some(b), Some(a)) => significance_test(&b, &a).ok(),
                _ => None,
            };
            for method in Method::ALL {
                let Some(values) = column(method) else { continue };
                rows.push(AggregateRow {
                    model_size: head.model_size.clone(),
                    error_rate: head.error_rate,
                    split,
                    method,
                    n_scenarios: values.len(),
                    mean: mean(&values),
                    std: std_dev(&values),
                    p_value,
                });
            }
        }
    }
    AggregateReport { rows }
}
