use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use dampen::data::inject_label_errors;
use dampen::data::synth::{csv_schema, generate_synthetic, write_csv, SynthConfig};
use dampen::fisher::{compute_importances, load_importances_for, persist_importances};
use dampen::harness::seeds::{derive_seed, Stream};
use dampen::harness::{apply_override, export_results, run_experiment, ExperimentConfig, Split};
use dampen::mia::evaluate_mia;
use dampen::nn::{init_model, train_with_report, ModelSpec, ModelState, TrainConfig};
use dampen::par::Execution;
use dampen::unlearn::{
    alpha_sweep, assd_unlearn_with, log_grid, ssd_dampen, write_sweep_csv, AlphaMode, AssdConfig, EvalSets, SsdConfig,
};
use serde::de::DeserializeOwned;

use crate::inputs::{default_schema_path, DataArgs, Part};

/// A mistake in the invocation rather than a failure of the computation.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Bad flags, invalid configuration and missing input files map to the usage
/// exit status; everything else is a runtime failure.
pub fn is_usage_error(e: &anyhow::Error) -> bool {
    let not_found = |io: &std::io::Error| io.kind() == std::io::ErrorKind::NotFound;
    e.chain().any(|cause| {
        cause.is::<UsageError>()
            || cause.downcast_ref::<std::io::Error>().is_some_and(not_found)
            || match cause.downcast_ref::<dampen::Error>() {
                Some(dampen::Error::Config(_)) => true,
                Some(dampen::Error::Io(io)) => not_found(io),
                _ => false,
            }
    })
}

/// Prints a result line; a closed stdout (e.g. piped into `head`) is not an error.
fn emit(text: impl fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn parse_key_val(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

/// Reads an optional TOML file, applies `--set` overrides and deserializes.
fn layered<T: DeserializeOwned>(file: Option<&Path>, overrides: &[(String, String)], what: &str) -> Result<T> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        apply_override(&mut table, k, v)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(format!("{what}: {}", e.message())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelState> {
    ModelState::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

// ---------------------------------------------------------------- train

/// Train a classifier on a dataset and write a checkpoint.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Rows to train on.
    #[arg(long, value_enum, default_value = "train")]
    part: Part,

    /// Hidden layers as LAYERSxWIDTH (e.g. 3x100) or dash-separated widths (e.g. 64-32).
    #[arg(long, value_name = "TAG", default_value = "3x100")]
    model: String,

    /// Build the network without batch normalization.
    #[arg(long)]
    no_batch_norm: bool,

    /// Seed for weight initialization and batch shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// TOML file with training hyperparameters (epochs, learning_rate, lr_decay,
    /// weight_decay, momentum, batch_size).
    #[arg(long, value_name = "TOML")]
    train_config: Option<PathBuf>,

    /// Override a hyperparameter, e.g. --set epochs=10 (repeatable; wins over --train-config).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_val)]
    overrides: Vec<(String, String)>,

    /// Checkpoint to write.
    #[arg(long, short, value_name = "PATH")]
    out: PathBuf,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = layered(a.train_config.as_deref(), &a.overrides, "training config")?;
    cfg.seed = derive_seed(a.seed, Stream::Shuffle);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let loaded = a.data.load()?;
    let rows = loaded.part(a.part)?;
    let mut spec =
        ModelSpec::from_tag(&a.model, rows.dim(), loaded.split.num_classes()).map_err(|e| usage(e.to_string()))?;
    spec.batch_norm = !a.no_batch_norm;
    let init = init_model(&spec, derive_seed(a.seed, Stream::Init))?;
    let (model, report) = train_with_report(&init, &rows, &cfg)?;
    model.save(&a.out)?;
    log::info!(
        "trained {} ({} parameters) on {} rows; final epoch loss {:.4}",
        spec.tag(),
        model.param_count(),
        rows.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    emit(a.out.display());
    Ok(())
}

// ---------------------------------------------------------- importances

/// Compute diagonal Fisher importances of a checkpoint over a set of rows.
///
/// Importances over the full training set only depend on the trained model,
/// so they can be computed once and reused for every later forget request.
#[derive(Debug, Args)]
pub struct ImportancesArgs {
    /// Checkpoint written by `dampen train`.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,

    #[command(flatten)]
    data: DataArgs,

    /// Rows to average over.
    #[arg(long, value_enum, default_value = "train")]
    part: Part,

    /// Importance file to write.
    #[arg(long, short, value_name = "PATH")]
    out: PathBuf,
}

pub fn importances(a: ImportancesArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let rows = a.data.load()?.part(a.part)?;
    let iv = compute_importances(&model, &rows)?;
    persist_importances(&iv, &a.out)?;
    log::info!("{} importances over {} rows", iv.len(), iv.sample_count);
    emit(a.out.display());
    Ok(())
}

// --------------------------------------------------------------- unlearn

/// Dampen the parameters a forget set depends on and write the new checkpoint.
///
/// Without --alpha the selection threshold is chosen adaptively from the
/// forget/full size ratio; with --alpha fixed-threshold dampening is used.
#[derive(Debug, Args)]
pub struct UnlearnArgs {
    /// Checkpoint to unlearn from.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,

    /// Importances over the full training set.
    #[arg(long, value_name = "PATH")]
    full: PathBuf,

    /// Importances over the forget set.
    #[arg(long, value_name = "PATH")]
    forget: PathBuf,

    /// Fixed selection threshold: parameters with forget importance > ALPHA x full importance are dampened.
    #[arg(long)]
    alpha: Option<f64>,

    /// Dampening strength for the fixed-threshold path.
    #[arg(long, default_value_t = 1.0, requires = "alpha")]
    lambda: f64,

    /// Ratio population the adaptive threshold is taken from.
    #[arg(long, value_enum, default_value = "top-fraction", conflicts_with = "alpha")]
    alpha_mode: AlphaModeArg,

    /// Logarithm base of the adaptive percentile rule [default: natural log].
    #[arg(long, conflicts_with = "alpha")]
    log_base: Option<f64>,

    /// Checkpoint to write.
    #[arg(long, short, value_name = "PATH")]
    out: PathBuf,

    /// Also write the unlearning report (JSON) here; it is always printed.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum AlphaModeArg {
    /// Percentile of forget/full importance ratios: dampens the top fraction.
    TopFraction,
    /// Percentile of full/forget importance ratios.
    RatioPercentile,
}

impl From<AlphaModeArg> for AlphaMode {
    fn from(m: AlphaModeArg) -> Self {
        match m {
            AlphaModeArg::TopFraction => AlphaMode::TopFraction,
            AlphaModeArg::RatioPercentile => AlphaMode::RatioPercentile,
        }
    }
}

pub fn unlearn(a: UnlearnArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (full, _) = load_importances_for(&a.full, &model)?;
    let (forget, _) = load_importances_for(&a.forget, &model)?;
    let (out, report) = match a.alpha {
        Some(alpha) => {
            let cfg = SsdConfig::new(alpha, a.lambda).map_err(|e| usage(e.to_string()))?;
            ssd_dampen(&model, &full, &forget, &cfg)?
        }
        None => {
            let cfg = AssdConfig {
                log_base: a.log_base,
                alpha_mode: a.alpha_mode.into(),
            };
            assd_unlearn_with(&model, &full, &forget, forget.sample_count, full.sample_count, &cfg)?
        }
    };
    out.save(&a.out)?;
    let json = report.to_json();
    if let Some(p) = &a.report {
        write_text(p, &format!("{json}\n"))?;
    }
    emit(&json);
    Ok(())
}

// ------------------------------------------------------------------- mia

/// Membership-inference score: the percentage of forget rows an attacker,
/// trained on member vs non-member losses, classifies as members.
#[derive(Debug, Args)]
pub struct MiaArgs {
    /// Checkpoint to attack.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,

    #[command(flatten)]
    data: DataArgs,

    /// Rows known to be in the training data.
    #[arg(long, value_enum, default_value = "retain")]
    members: Part,

    /// Rows known not to be in the training data.
    #[arg(long, value_enum, default_value = "test")]
    nonmembers: Part,

    /// Rows to score.
    #[arg(long = "target", value_enum, default_value = "forget")]
    target: Part,

    /// Seed of the attacker's class balancing and fitting.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Also write the result (JSON) here; it is always printed.
    #[arg(long, short, value_name = "PATH")]
    out: Option<PathBuf>,
}

pub fn mia(a: MiaArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let loaded = a.data.load()?;
    let outcome = evaluate_mia(
        &model,
        &loaded.part(a.members)?,
        &loaded.part(a.nonmembers)?,
        &loaded.part(a.target)?,
        derive_seed(a.seed, Stream::Attack),
        Execution::default(),
    )?;
    let json = serde_json::to_string_pretty(&outcome)?;
    if let Some(p) = &a.out {
        write_text(p, &format!("{json}\n"))?;
    }
    emit(&json);
    Ok(())
}

// ----------------------------------------------------------------- sweep

/// Evaluate fixed-threshold dampening over a log-spaced alpha grid (lambda = 1)
/// and write one CSV row per alpha.
#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Checkpoint to unlearn from.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,

    /// Importances over the full training set.
    #[arg(long, value_name = "PATH")]
    full: PathBuf,

    /// Importances over the forget set.
    #[arg(long, value_name = "PATH")]
    forget: PathBuf,

    /// Dataset and label-error record defining the retain, forget and test rows.
    #[command(flatten)]
    data: DataArgs,

    /// Smallest alpha.
    #[arg(long, default_value_t = 0.1)]
    from: f64,

    /// Largest alpha.
    #[arg(long, default_value_t = 100.0)]
    to: f64,

    /// Number of grid points.
    #[arg(long, default_value_t = 20)]
    points: usize,

    /// Seed of the membership-inference attacker.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// CSV to write.
    #[arg(long, short, value_name = "PATH")]
    out: PathBuf,
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    if a.data.errors.is_none() {
        return Err(usage("sweep needs --errors to know the forget set"));
    }
    if !(a.from > 0.0 && a.from <= a.to && a.to.is_finite() && a.points > 0) {
        return Err(usage("the alpha grid needs 0 < --from <= --to and --points >= 1"));
    }
    let grid = log_grid(a.from, a.to, a.points);
    let model = load_model(&a.model)?;
    let (full, _) = load_importances_for(&a.full, &model)?;
    let (forget_imp, _) = load_importances_for(&a.forget, &model)?;
    let loaded = a.data.load()?;
    let (retain, forget, test) = (
        loaded.part(Part::Retain)?,
        loaded.part(Part::Forget)?,
        loaded.part(Part::Test)?,
    );
    let sets = EvalSets {
        retain: &retain,
        forget: &forget,
        test: &test,
    };
    let rows = alpha_sweep(
        &model,
        &full,
        &forget_imp,
        &grid,
        sets,
        derive_seed(a.seed, Stream::Attack),
        Execution::default(),
    )?;
    write_sweep_csv(&rows, &a.out)?;
    emit(a.out.display());
    Ok(())
}

// ------------------------------------------------------------ experiment

/// Run the label-error correction study described by a TOML config and write
/// aggregate.csv, scenarios.csv and timings.csv.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Study configuration (see docs/CLI.md for the keys).
    #[arg(long, short, value_name = "TOML")]
    config: PathBuf,

    /// Override a config key, e.g. --set study.scenarios=10 (repeatable; wins over the file).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_val)]
    overrides: Vec<(String, String)>,

    /// Scenarios run concurrently [default: study.workers from the config, else 1].
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory [default: output_dir from the config].
    #[arg(long, short, value_name = "DIR")]
    out: Option<PathBuf>,
}

pub fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut overrides = a.overrides.clone();
    if let Some(w) = a.workers {
        overrides.push(("study.workers".into(), w.to_string()));
    }
    let cfg =
        ExperimentConfig::load(&a.config, &overrides).with_context(|| format!("config {}", a.config.display()))?;
    let out_dir = a.out.unwrap_or_else(|| cfg.output_dir.clone());
    let data = cfg.load_data()?;
    let plan = cfg.plan(&data)?;
    log::info!(
        "{} sizes x {} rates x {} scenarios on {} train / {} test rows",
        plan.specs.len(),
        plan.rates.len(),
        plan.n_scenarios,
        data.train.len(),
        data.test.len()
    );
    let outcome = run_experiment(&data, &plan)?;
    export_results(&outcome.report, &outcome.results, &out_dir)?;
    for f in &outcome.failures {
        log::warn!("{f:?}");
    }
    emit(format_args!(
        "{:<8} {:>7} {:<9} {:>9} {:>9} {:>8}",
        "size", "rate", "method", "test", "std", "p"
    ));
    for row in outcome.report.rows.iter().filter(|r| r.split == Split::Test) {
        emit(format_args!(
            "{:<8} {:>7.4} {:<9} {:>9.4} {:>9.4} {:>8}",
            row.model_size,
            row.error_rate,
            row.method.as_str(),
            row.mean,
            row.std,
            row.p_value.map_or("-".to_string(), |p| format!("{p:.4}"))
        ));
    }
    emit(format_args!("wrote {}", out_dir.display()));
    if !outcome.failures.is_empty() {
        anyhow::bail!("{} scenarios failed", outcome.failures.len());
    }
    Ok(())
}

// ----------------------------------------------------------------- synth

/// Generate the synthetic tabular benchmark as a CSV plus a matching schema file.
#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of rows.
    #[arg(long, default_value_t = 20_000)]
    n: usize,

    /// Number of features.
    #[arg(long, default_value_t = 20)]
    features: usize,

    /// Number of classes.
    #[arg(long, default_value_t = 3)]
    classes: usize,

    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Override another generator field, e.g. --set label_temperature=0.2 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_val)]
    overrides: Vec<(String, String)>,

    /// CSV to write; the schema goes to <stem>.schema.toml alongside it.
    #[arg(long, short, value_name = "PATH")]
    out: PathBuf,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut overrides = vec![
        ("n".to_string(), a.n.to_string()),
        ("d".to_string(), a.features.to_string()),
        ("num_classes".to_string(), a.classes.to_string()),
    ];
    overrides.extend(a.overrides.iter().cloned());
    let cfg: SynthConfig = layered(None, &overrides, "generator")?;
    let ds = generate_synthetic(&cfg, a.seed).map_err(|e| usage(e.to_string()))?;
    write_csv(&ds, &a.out)?;
    let schema_path = default_schema_path(&a.out);
    write_text(&schema_path, &csv_schema(&ds).to_toml())?;
    emit(a.out.display());
    emit(schema_path.display());
    Ok(())
}

// ---------------------------------------------------------------- inject

/// Flip a fraction of training labels and record which rows changed. The
/// record defines the forget and retain sets for the other subcommands.
#[derive(Debug, Args)]
pub struct InjectArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Fraction of training rows whose label is flipped.
    #[arg(long)]
    rate: f64,

    /// Seed choosing the rows and their new labels.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Label-error record (JSON) to write.
    #[arg(long, short, value_name = "PATH")]
    out: PathBuf,
}

pub fn inject(a: InjectArgs) -> Result<()> {
    if a.data.errors.is_some() {
        return Err(usage("inject starts from clean labels; drop --errors"));
    }
    let loaded = a.data.load()?;
    let (_, scenario) = inject_label_errors(&loaded.split.train, a.rate, derive_seed(a.seed, Stream::Errors))
        .map_err(|e| usage(e.to_string()))?;
    write_text(&a.out, &format!("{}\n", scenario.to_json()))?;
    log::info!(
        "flipped {} of {} training labels",
        scenario.flipped_indices.len(),
        scenario.n_train
    );
    emit(a.out.display());
    Ok(())
}
