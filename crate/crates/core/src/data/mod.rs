//! Tabular datasets: CSV ingestion, temporal splits, label-error injection
//! and a synthetic benchmark generator.

mod errors;
mod schema;
pub mod synth;

use ndarray::{Array2, Axis};

pub use errors::{inject_label_errors, ErrorScenario};
pub use schema::{derive_delay_label, load_csv, DelayClass, LabelMode, Preprocessor, RawTable, SchemaConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    /// `n x d`, already preprocessed.
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub timestamps: Vec<f64>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Stable provenance id of every row (its index in the source table).
    pub row_ids: Vec<usize>,
}

impl TabularDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        timestamps: Vec<f64>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || timestamps.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: labels.len().min(timestamps.len()),
                context: "dataset columns",
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch {
                expected: features.ncols(),
                actual: feature_names.len(),
                context: "feature names",
            });
        }
        let ds = TabularDataset {
            features,
            labels,
            timestamps,
            feature_names,
            class_names,
            row_ids: (0..n).collect(),
        };
        ds.check_labels(ds.num_classes())?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn check_labels(&self, k: usize) -> Result<()> {
        match self.labels.iter().find(|&&y| y >= k) {
            Some(&label) => Err(Error::LabelOutOfRange { label, num_classes: k }),
            None => Ok(()),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> TabularDataset {
        TabularDataset {
            features: self.features.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Splits off the latest `ceil(test_fraction * n)` rows by timestamp.
    /// Ties keep their original row order.
    pub fn temporal_split(&self, test_fraction: f64) -> Result<(TabularDataset, TabularDataset)> {
        let (train_idx, test_idx) = temporal_indices(&self.timestamps, test_fraction)?;
        Ok((self.select(&train_idx), self.select(&test_idx)))
    }
}

/// Row indices of the (train, test) parts of a temporal split.
pub fn temporal_indices(timestamps: &[f64], test_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = timestamps.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "temporal split needs at least 2 rows, got {n}"
        )));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| timestamps[a].total_cmp(&timestamps[b]));
    let n_test = ((test_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let test = order.split_off(n - n_test);
    Ok((order, test))
}
