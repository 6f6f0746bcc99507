//! TOML configuration of a full study.
//!
//! ```toml
//! output_dir = "results"
//! test_fraction = 0.2
//! data_seed = 0               # synthetic generator only
//!
//! [data]                      # or a [synthetic] table, never both
//! path = "orders.csv"
//! schema = "schema.toml"      # relative paths resolve against the config file
//!
//! [model]
//! sizes = ["2x50", "3x100", "5x250"]
//!
//! [train]
//! epochs = 25
//!
//! [study]
//! rates = [0.01, 0.025]
//! scenarios = 100
//! base_seed = 0
//! workers = 1
//!
//! [assd]
//! alpha_mode = "ratio_percentile"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentPlan, DEFAULT_RATES};
use super::scenario::{ScenarioOptions, SplitData, DEFAULT_TEST_FRACTION};
use crate::data::synth::{generate_synthetic, SynthConfig};
use crate::data::{load_csv, SchemaConfig};
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, TrainConfig};
use crate::unlearn::AssdConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Path of a schema TOML file.
    pub schema: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub sizes: Vec<String>,
    pub batch_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sizes: vec!["2x50".into(), "3x100".into(), "5x250".into()],
            batch_norm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub rates: Vec<f64>,
    pub scenarios: usize,
    pub base_seed: u64,
    pub workers: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            rates: DEFAULT_RATES.to_vec(),
            scenarios: 100,
            base_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub data: Option<CsvSource>,
    pub synthetic: Option<SynthConfig>,
    /// Seed of the synthetic generator.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub assd: AssdConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_test_fraction() -> f64 {
    DEFAULT_TEST_FRACTION
}

/// Where the study's rows come from, with paths already resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv { path: PathBuf, schema: SchemaConfig },
    Synthetic { generator: SynthConfig, seed: u64 },
}

/// Sets the dotted `key` (e.g. `study.scenarios`) in `table`. The value is
/// parsed as a TOML value when possible and taken as a string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_owned()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("invalid override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

impl ExperimentConfig {
    /// Parses `text`, applies `overrides` (flags win over the file) and
    /// resolves relative paths against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[(String, String)], base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        if let Some(d) = &mut cfg.data {
            resolve(&mut d.path);
            resolve(&mut d.schema);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, overrides, base)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synthetic) {
            (None, None) => {
                return Err(Error::Config(
                    "missing key `data`: add a [data] table (path, schema) or a [synthetic] table".into(),
                ))
            }
            (Some(_), Some(_)) => return Err(Error::Config("`data` and `synthetic` are mutually exclusive".into())),
            _ => {}
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.model.sizes.is_empty() {
            return Err(Error::Config("model.sizes must not be empty".into()));
        }
        if self.study.rates.is_empty() {
            return Err(Error::Config("study.rates must not be empty".into()));
        }
        if self.study.scenarios == 0 {
            return Err(Error::Config("study.scenarios must be >= 1".into()));
        }
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))
    }

    pub fn source(&self) -> Result<DataSource> {
        match (&self.data, &self.synthetic) {
            (Some(d), None) => Ok(DataSource::Csv {
                path: d.path.clone(),
                schema: SchemaConfig::load(&d.schema)?,
            }),
            (None, Some(s)) => Ok(DataSource::Synthetic {
                generator: s.clone(),
                seed: self.data_seed,
            }),
            _ => {
                self.validate()?;
                unreachable!("validate rejects both and neither")
            }
        }
    }

    pub fn load_data(&self) -> Result<SplitData> {
        match self.source()? {
            DataSource::Csv { path, schema } => {
                let table = load_csv(&path, &schema)?;
                SplitData::from_table(&table, self.test_fraction)
            }
            DataSource::Synthetic { generator, seed } => {
                SplitData::from_dataset(&generate_synthetic(&generator, seed)?, self.test_fraction)
            }
        }
    }

    pub fn plan(&self, data: &SplitData) -> Result<ExperimentPlan> {
        let specs = self
            .model
            .sizes
            .iter()
            .map(|tag| {
                let mut spec = ModelSpec::from_tag(tag, data.train.dim(), data.num_classes())?;
                spec.batch_norm = self.model.batch_norm;
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentPlan {
            specs,
            rates: self.study.rates.clone(),
            n_scenarios: self.study.scenarios,
            base_seed: self.study.base_seed,
            train: self.train.clone(),
            options: ScenarioOptions {
                assd: self.assd,
                ..ScenarioOptions::default()
            },
            workers: self.study.workers,
        })
    }
}
