//! Synthetic tabular benchmark: Gaussian-cluster features labeled by a random
//! teacher network, with class priors bent to a power law.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use super::schema::{LabelMode, SchemaConfig};
use super::TabularDataset;
use crate::error::{Error, Result};
use crate::format::format_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    /// Class `k` (0-based) gets prior mass proportional to `1 / (k+1)^a`.
    pub power_exponent: f64,
    pub clusters: usize,
    /// Standard deviation of cluster centres (points have unit noise).
    pub cluster_spread: f64,
    pub teacher_hidden: usize,
    /// Scale of the Gumbel noise added to standardized teacher logits.
    /// Zero gives a deterministic teacher.
    pub label_temperature: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 20_000,
            d: 20,
            num_classes: 3,
            power_exponent: 1.0,
            clusters: 12,
            cluster_spread: 1.5,
            teacher_hidden: 32,
            label_temperature: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn class_priors(&self) -> Vec<f64> {
        let w: Vec<f64> = (0..self.num_classes)
            .map(|k| 1.0 / ((k + 1) as f64).powf(self.power_exponent))
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<TabularDataset> {
    if cfg.n == 0 || cfg.d == 0 || cfg.clusters == 0 || cfg.teacher_hidden == 0 {
        return Err(Error::InvalidArgument("synthetic sizes must be >= 1".into()));
    }
    if cfg.num_classes < 2 {
        return Err(Error::InvalidArgument("synthetic data needs at least 2 classes".into()));
    }
    let (n, d, k, h) = (cfg.n, cfg.d, cfg.num_classes, cfg.teacher_hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let centres = Array2::from_shape_simple_fn((cfg.clusters, d), || cfg.cluster_spread * std_normal.sample(&mut rng));
    let mut x = Array2::zeros((n, d));
    for mut row in x.rows_mut() {
        let c = rng.random_range(0..cfg.clusters);
        for (j, v) in row.iter_mut().enumerate() {
            *v = centres[[c, j]] + std_normal.sample(&mut rng);
        }
    }

    let scale_in = 1.0 / ((d as f64) * (1.0 + cfg.cluster_spread * cfg.cluster_spread)).sqrt();
    let w1 = Array2::from_shape_simple_fn((h, d), || 2.0 * scale_in * std_normal.sample(&mut rng));
    let b1 = Array1::from_shape_simple_fn(h, || 0.5 * std_normal.sample(&mut rng));
    let w2 = Array2::from_shape_simple_fn((k, h), || std_normal.sample(&mut rng) / (h as f64).sqrt());
    let hidden = (x.dot(&w1.t()) + &b1).mapv(f64::tanh);
    let mut logits = hidden.dot(&w2.t());
    let mean = logits.mean().unwrap_or(0.0);
    let sd = logits.std(0.0).max(1e-12);
    logits.mapv_inplace(|v| (v - mean) / sd);

    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let noise = Array2::from_shape_simple_fn((n, k), || cfg.label_temperature * gumbel.sample(&mut rng));
    let noisy = &logits + &noise;

    // shift class offsets until the label frequencies match the power-law priors
    let target = cfg.class_priors();
    let mut bias = vec![0.0; k];
    let mut labels = vec![0usize; n];
    for _ in 0..200 {
        let mut counts = vec![0usize; k];
        for (i, row) in noisy.rows().into_iter().enumerate() {
            let mut best = 0;
            for c in 1..k {
                if row[c] + bias[c] > row[best] + bias[best] {
                    best = c;
                }
            }
            labels[i] = best;
            counts[best] += 1;
        }
        let mut worst: f64 = 0.0;
        for c in 0..k {
            let freq = (counts[c] as f64 / n as f64).max(0.5 / n as f64);
            worst = worst.max((freq / target[c] - 1.0).abs());
            bias[c] += 0.5 * (target[c] / freq).ln();
        }
        if worst < 0.01 {
            break;
        }
    }

    let timestamps = (0..n).map(|i| i as f64).collect();
    TabularDataset::new(x, labels, timestamps, feature_names(d), class_names(k))
}

/// Well-separated isotropic blobs, one per class, for quick sanity checks.
pub fn generate_blobs(n: usize, d: usize, k: usize, seed: u64) -> Result<TabularDataset> {
    if d == 0 || k < 2 {
        return Err(Error::InvalidArgument("blobs need d >= 1 and k >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let centres = Array2::from_shape_fn((k, d), |(c, j)| if j == c % d { 6.0 * (1 + c / d) as f64 } else { 0.0 });
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let c = i % k;
        labels.push(c);
        for (j, v) in row.iter_mut().enumerate() {
            *v = centres[[c, j]] + std_normal.sample(&mut rng);
        }
    }
    let timestamps = (0..n).map(|i| i as f64).collect();
    TabularDataset::new(x, labels, timestamps, feature_names(d), class_names(k))
}

/// Schema matching the CSV written by [`write_csv`].
pub fn csv_schema(ds: &TabularDataset) -> SchemaConfig {
    SchemaConfig {
        numeric_columns: ds.feature_names.clone(),
        categorical_columns: Vec::new(),
        timestamp_column: "timestamp".into(),
        label: LabelMode::Direct {
            column: "label".into(),
            classes: ds.class_names.clone(),
        },
    }
}

/// Writes features (17 significant digits), label name and timestamp.
pub fn write_csv(ds: &TabularDataset, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = ds.feature_names.clone();
    header.push("label".into());
    header.push("timestamp".into());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.len() {
        let mut cells: Vec<String> = ds.row(i).iter().map(|v| format_f64(*v)).collect();
        cells.push(ds.class_names[ds.labels[i]].clone());
        cells.push(format_f64(ds.timestamps[i]));
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}
