//! Dataset selection shared by the per-step subcommands.
//!
//! Every step reloads the CSV and redoes the temporal split, so the same flags
//! always yield the same rows in the same order.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use dampen::data::{load_csv, ErrorScenario, SchemaConfig, TabularDataset};
use dampen::harness::{SplitData, DEFAULT_TEST_FRACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Part {
    /// The whole training split (with flipped labels when --errors is given).
    Train,
    /// The held-out (most recent) rows.
    Test,
    /// Flipped training rows; needs --errors.
    Forget,
    /// Training rows that were not flipped; needs --errors.
    Retain,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,

    /// Schema TOML describing the CSV [default: <CSV stem>.schema.toml next to the CSV].
    #[arg(long, value_name = "TOML")]
    pub schema: Option<PathBuf>,

    /// Fraction of the most recent rows held out as the test split.
    #[arg(long, value_name = "F", default_value_t = DEFAULT_TEST_FRACTION)]
    pub test_fraction: f64,

    /// Label-error record from `dampen inject`, applied to the training split.
    #[arg(long, value_name = "JSON")]
    pub errors: Option<PathBuf>,
}

pub fn default_schema_path(csv: &Path) -> PathBuf {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv.with_file_name(format!("{stem}.schema.toml"))
}

/// The loaded split plus the optional corruption record.
pub struct Loaded {
    pub split: SplitData,
    pub scenario: Option<ErrorScenario>,
}

impl DataArgs {
    pub fn load(&self) -> Result<Loaded> {
        let schema_path = self.schema.clone().unwrap_or_else(|| default_schema_path(&self.data));
        let schema = SchemaConfig::load(&schema_path)
            .with_context(|| format!("reading schema {} (pass --schema)", schema_path.display()))?;
        let table = load_csv(&self.data, &schema).with_context(|| format!("loading {}", self.data.display()))?;
        let mut split = SplitData::from_table(&table, self.test_fraction)?;
        let scenario = match &self.errors {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let scenario = ErrorScenario::from_json(&text)?;
                split.train = scenario
                    .apply(&split.train)
                    .with_context(|| format!("{} does not match this dataset", path.display()))?;
                Some(scenario)
            }
            None => None,
        };
        log::info!(
            "train split {} rows, test split {} rows",
            split.train.len(),
            split.test.len()
        );
        Ok(Loaded { split, scenario })
    }
}

impl Loaded {
    pub fn part(&self, part: Part) -> Result<TabularDataset> {
        let scenario = || match &self.scenario {
            Some(s) => Ok(s),
            None => bail!(
                "--part {part:?} needs --errors",
                part = part.to_possible_value().unwrap().get_name()
            ),
        };
        Ok(match part {
            Part::Train => self.split.train.clone(),
            Part::Test => self.split.test.clone(),
            Part::Forget => self.split.train.select(scenario()?.forget_indices()),
            Part::Retain => self.split.train.select(&scenario()?.retain_indices()),
        })
    }
}
