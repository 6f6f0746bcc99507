//! Schema-driven CSV ingestion. Loading is two-phase: [`load_csv`] produces a
//! [`RawTable`]; z-scoring and one-hot vocabularies are fit on the training
//! split only when the table is split.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{temporal_indices, TabularDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    #[serde(default)]
    pub numeric_columns: Vec<String>,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    pub timestamp_column: String,
    pub label: LabelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelMode {
    /// Label read from a column. With an empty `classes` list the vocabulary
    /// is the sorted set of observed values.
    Direct {
        column: String,
        #[serde(default)]
        classes: Vec<String>,
    },
    /// early / on-time / delayed from real vs scheduled shipping days.
    Delay {
        real_days_column: String,
        scheduled_days_column: String,
    },
}

impl SchemaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.numeric_columns.is_empty() && self.categorical_columns.is_empty() {
            return Err(Error::Schema("at least one feature column is required".into()));
        }
        let mut seen = BTreeSet::new();
        for c in self.numeric_columns.iter().chain(&self.categorical_columns) {
            if !seen.insert(c) {
                return Err(Error::Schema(format!("column {c:?} listed more than once")));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: SchemaConfig = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayClass {
    Early = 0,
    OnTime = 1,
    Delayed = 2,
}

pub const DELAY_CLASS_NAMES: [&str; 3] = ["early", "on-time", "delayed"];

pub fn derive_delay_label(real_days: f64, scheduled_days: f64) -> Result<DelayClass> {
    if !real_days.is_finite() || !scheduled_days.is_finite() {
        return Err(Error::NonFinite("shipping days"));
    }
    Ok(if real_days < scheduled_days {
        DelayClass::Early
    } else if real_days == scheduled_days {
        DelayClass::OnTime
    } else {
        DelayClass::Delayed
    })
}

/// Rows that survived parsing, before any fitted transform.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub numeric_names: Vec<String>,
    /// Row-major `n x numeric_names.len()`.
    pub numeric: Vec<f64>,
    pub categorical_names: Vec<String>,
    /// Row-major `n x categorical_names.len()`.
    pub categorical: Vec<String>,
    pub timestamps: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub dropped_rows: usize,
}

/// Parses a timestamp cell: plain number, ISO-8601, or `m/d/Y H:M`.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    for fmt in [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M",
        "%m/%d/%Y %H:%M:%S",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp() as f64);
        }
    }
    for fmt in ["%Y-%m-%d", "%m/%d/%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64);
        }
    }
    None
}

fn parse_num(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn load_csv(path: &Path, schema: &SchemaConfig) -> Result<RawTable> {
    let reader = csv::ReaderBuilder::new().from_path(path)?;
    load_csv_reader(reader, schema)
}

pub fn load_csv_reader<R: std::io::Read>(mut reader: csv::Reader<R>, schema: &SchemaConfig) -> Result<RawTable> {
    schema.validate()?;
    // byte records: source files are not always valid UTF-8
    let headers: Vec<String> = reader
        .byte_headers()?
        .iter()
        .map(|h| {
            String::from_utf8_lossy(h)
                .trim()
                .trim_start_matches('\u{feff}')
                .to_string()
        })
        .collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let num_idx = schema
        .numeric_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let cat_idx = schema
        .categorical_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let ts_idx = col(&schema.timestamp_column)?;
    enum LabelSrc {
        Direct(usize, HashMap<String, usize>, bool),
        Delay(usize, usize),
    }
    let mut label_src = match &schema.label {
        LabelMode::Direct { column, classes } => LabelSrc::Direct(
            col(column)?,
            classes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect(),
            classes.is_empty(),
        ),
        LabelMode::Delay {
            real_days_column,
            scheduled_days_column,
        } => LabelSrc::Delay(col(real_days_column)?, col(scheduled_days_column)?),
    };

    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut timestamps = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    let mut nums = Vec::with_capacity(num_idx.len());
    for rec in reader.byte_records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).map(String::from_utf8_lossy);
        nums.clear();
        let mut ok = true;
        for &i in &num_idx {
            match field(i).and_then(|s| parse_num(&s)) {
                Some(v) => nums.push(v),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        let ts = field(ts_idx).and_then(|s| parse_timestamp(&s));
        let label: Option<std::result::Result<usize, String>> = match &mut label_src {
            LabelSrc::Direct(i, map, infer) => field(*i).and_then(|s| {
                let s = s.trim().to_string();
                if *infer {
                    Some(Err(s))
                } else {
                    map.get(&s).copied().map(Ok)
                }
            }),
            LabelSrc::Delay(r, s) => match (
                field(*r).and_then(|v| parse_num(&v)),
                field(*s).and_then(|v| parse_num(&v)),
            ) {
                (Some(r), Some(s)) => derive_delay_label(r, s).ok().map(|c| Ok(c as usize)),
                _ => None,
            },
        };
        let cats: Option<Vec<String>> = cat_idx
            .iter()
            .map(|&i| field(i).map(|s| s.trim().to_string()))
            .collect();
        match (ok, ts, label, cats) {
            (true, Some(ts), Some(label), Some(cats)) => {
                numeric.extend_from_slice(&nums);
                categorical.extend(cats);
                timestamps.push(ts);
                match label {
                    Ok(l) => labels.push(l),
                    Err(s) => raw_labels.push(s),
                }
            }
            _ => dropped += 1,
        }
    }
    let class_names = match &schema.label {
        LabelMode::Direct { classes, .. } if classes.is_empty() => {
            let vocab: Vec<String> = raw_labels
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let map: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
            labels = raw_labels.iter().map(|s| map[s.as_str()]).collect();
            vocab
        }
        LabelMode::Direct { classes, .. } => classes.clone(),
        LabelMode::Delay { .. } => DELAY_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    if timestamps.is_empty() {
        return Err(Error::Schema(format!("no usable rows ({dropped} dropped)")));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with unparseable required fields");
    }
    Ok(RawTable {
        numeric_names: schema.numeric_columns.clone(),
        numeric,
        categorical_names: schema.categorical_columns.clone(),
        categorical,
        timestamps,
        labels,
        class_names,
        dropped_rows: dropped,
    })
}

/// Z-score statistics and one-hot vocabularies fit on a subset of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub vocab: Vec<Vec<String>>,
    /// Rows the statistics were fit on.
    pub fit_rows: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Treats every feature of an already-numeric dataset as a raw numeric column.
    pub fn from_dataset(ds: &TabularDataset) -> Self {
        RawTable {
            numeric_names: ds.feature_names.clone(),
            numeric: ds.features.iter().copied().collect(),
            categorical_names: Vec::new(),
            categorical: Vec::new(),
            timestamps: ds.timestamps.clone(),
            labels: ds.labels.clone(),
            class_names: ds.class_names.clone(),
            dropped_rows: 0,
        }
    }

    fn num(&self, row: usize, col: usize) -> f64 {
        self.numeric[row * self.numeric_names.len() + col]
    }

    fn cat(&self, row: usize, col: usize) -> &str {
        &self.categorical[row * self.categorical_names.len() + col]
    }

    /// Temporal split with preprocessing fit on the training rows only.
    pub fn split(&self, test_fraction: f64) -> Result<(TabularDataset, TabularDataset, Preprocessor)> {
        let (train_idx, test_idx) = temporal_indices(&self.timestamps, test_fraction)?;
        let pre = Preprocessor::fit(self, &train_idx)?;
        Ok((pre.transform(self, &train_idx)?, pre.transform(self, &test_idx)?, pre))
    }

    /// Fits on and transforms every row.
    pub fn into_dataset(&self) -> Result<TabularDataset> {
        let all: Vec<usize> = (0..self.len()).collect();
        Preprocessor::fit(self, &all)?.transform(self, &all)
    }
}

impl Preprocessor {
    pub fn fit(table: &RawTable, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = rows.len() as f64;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for c in 0..table.numeric_names.len() {
            let mean = rows.iter().map(|&r| table.num(r, c)).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (table.num(r, c) - mean).powi(2)).sum::<f64>() / n;
            means.push(mean);
            // constant column: leave it centred at zero
            stds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        let vocab = (0..table.categorical_names.len())
            .map(|c| {
                rows.iter()
                    .map(|&r| table.cat(r, c).to_string())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .collect();
        Ok(Preprocessor {
            means,
            stds,
            vocab,
            fit_rows: rows.len(),
        })
    }

    pub fn feature_names(&self, table: &RawTable) -> Vec<String> {
        let mut names = table.numeric_names.clone();
        for (c, vocab) in table.categorical_names.iter().zip(&self.vocab) {
            names.extend(vocab.iter().map(|v| format!("{c}={v}")));
        }
        names
    }

    /// Unseen categories encode as an all-zero block.
    pub fn transform(&self, table: &RawTable, rows: &[usize]) -> Result<TabularDataset> {
        let names = self.feature_names(table);
        let d = names.len();
        let mut x = Array2::zeros((rows.len(), d));
        let lookups: Vec<HashMap<&str, usize>> = self
            .vocab
            .iter()
            .map(|v| v.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect())
            .collect();
        for (i, &r) in rows.iter().enumerate() {
            let mut j = 0;
            for c in 0..self.means.len() {
                x[[i, j]] = (table.num(r, c) - self.means[c]) / self.stds[c];
                j += 1;
            }
            for (c, lookup) in lookups.iter().enumerate() {
                if let Some(&k) = lookup.get(table.cat(r, c)) {
                    x[[i, j + k]] = 1.0;
                }
                j += lookup.len();
            }
        }
        Ok(TabularDataset {
            features: x,
            labels: rows.iter().map(|&r| table.labels[r]).collect(),
            timestamps: rows.iter().map(|&r| table.timestamps[r]).collect(),
            feature_names: names,
            class_names: table.class_names.clone(),
            row_ids: rows.to_vec(),
        })
    }
}
