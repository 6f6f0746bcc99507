//! Selective synaptic dampening and its adaptive, parameter-free variant.
//!
//! SSD selects parameter `i` when its forget-set importance exceeds `alpha`
//! times its full-data importance and scales it by
//! `beta = min(lambda * imp_full[i] / imp_forget[i], 1)`. The adaptive variant
//! fixes `lambda = 1` and picks `alpha` as a percentile of the importance
//! ratios, where the percentile shrinks logarithmically with the forget-set
//! share of the data.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::fisher::ImportanceVector;
use crate::mia;
use crate::nn::{evaluate_accuracy_with, ModelState};
use crate::par::{self, Execution};
use crate::stats::percentile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsdConfig {
    pub alpha: f64,
    pub lambda: f64,
}

impl SsdConfig {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        let cfg = SsdConfig { alpha, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// How the adaptive alpha is read off the importance ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// `alpha = P_p(imp_full / imp_forget)`. When forget-set gradients are
    /// much larger than average (e.g. mislabeled rows) this selects almost
    /// every parameter.
    RatioPercentile,
    /// `alpha = P_p(imp_forget / imp_full)`: selects exactly the top
    /// `(100 - p)`% most forget-specialized parameters.
    #[default]
    TopFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssdConfig {
    /// Logarithm base for the percentile rule; `None` is the natural log.
    pub log_base: Option<f64>,
    pub alpha_mode: AlphaMode,
}

impl Default for AssdConfig {
    fn default() -> Self {
        AssdConfig {
            log_base: None,
            alpha_mode: AlphaMode::TopFraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub percentile_p: f64,
    /// `None` when nothing was unlearned because the forget set was empty.
    pub chosen_alpha: Option<f64>,
    pub lambda: f64,
    pub dampened_count: usize,
    pub dampened_fraction: f64,
    pub param_count: usize,
    pub forget_size: usize,
    pub full_size: usize,
}

impl UnlearnReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `p = 100 - log(1 + 100 * forget_size / full_size)`, clamped to `[0, 100]`.
pub fn compute_percentile_p(forget_size: usize, full_size: usize) -> Result<f64> {
    compute_percentile_p_base(forget_size, full_size, None)
}

pub fn compute_percentile_p_base(forget_size: usize, full_size: usize, log_base: Option<f64>) -> Result<f64> {
    if full_size == 0 {
        return Err(Error::InvalidArgument("full_size must be > 0".into()));
    }
    if forget_size > full_size {
        return Err(Error::InvalidArgument(format!(
            "forget_size {forget_size} exceeds full_size {full_size}"
        )));
    }
    let x = 1.0 + 100.0 * forget_size as f64 / full_size as f64;
    let log = match log_base {
        None => x.ln(),
        Some(b) if b > 0.0 && b != 1.0 => x.ln() / b.ln(),
        Some(b) => return Err(Error::InvalidArgument(format!("invalid log base {b}"))),
    };
    Ok((100.0 - log).clamp(0.0, 100.0))
}

fn check_pair(full: &ImportanceVector, forget: &ImportanceVector) -> Result<()> {
    if full.len() != forget.len() {
        return Err(Error::DimensionMismatch {
            expected: full.len(),
            actual: forget.len(),
            context: "importance vectors",
        });
    }
    full.validate()?;
    forget.validate()
}

/// Ratio population for the adaptive percentile. Coordinates with zero forget
/// importance can never be selected and are left out.
pub fn ratio_population(full: &[f64], forget: &[f64], mode: AlphaMode) -> Vec<f64> {
    full.iter()
        .zip(forget)
        .filter(|(_, &f)| f > 0.0)
        .filter_map(|(&d, &f)| match mode {
            AlphaMode::RatioPercentile => Some(d / f),
            // zero full importance: always selected, ratio is unbounded
            AlphaMode::TopFraction => (d > 0.0).then(|| f / d),
        })
        .collect()
}

/// Alpha as the `p`-th percentile of `imp_full / imp_forget`.
pub fn select_alpha_adaptive(full: &ImportanceVector, forget: &ImportanceVector, p: f64) -> Result<f64> {
    select_alpha(full, forget, p, AlphaMode::RatioPercentile)
}

pub fn select_alpha(full: &ImportanceVector, forget: &ImportanceVector, p: f64, mode: AlphaMode) -> Result<f64> {
    check_pair(full, forget)?;
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 100]")));
    }
    let mut pop = ratio_population(&full.values, &forget.values, mode);
    if pop.is_empty() {
        return Err(Error::NothingToUnlearn);
    }
    pop.sort_by(f64::total_cmp);
    let alpha = percentile_sorted(&pop, p);
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "adaptive alpha {alpha} is not a positive finite number"
        )));
    }
    Ok(alpha)
}

/// `imp_forget[i] > alpha * imp_full[i]`.
pub fn is_selected(full: f64, forget: f64, alpha: f64) -> bool {
    forget > alpha * full
}

pub fn selection_mask(full: &ImportanceVector, forget: &ImportanceVector, alpha: f64) -> Vec<bool> {
    full.values
        .iter()
        .zip(&forget.values)
        .map(|(&d, &f)| is_selected(d, f, alpha))
        .collect()
}

/// Dampens a flattened parameter vector in place; returns the selected count.
pub fn dampen_parameters(theta: &mut [f64], full: &[f64], forget: &[f64], cfg: &SsdConfig) -> usize {
    let mut count = 0;
    for ((t, &d), &f) in theta.iter_mut().zip(full).zip(forget) {
        if is_selected(d, f, cfg.alpha) {
            let beta = (cfg.lambda * d / f).min(1.0);
            *t *= beta;
            count += 1;
        }
    }
    count
}

/// Applies SSD to the trainable parameters. BN running statistics are untouched.
pub fn ssd_dampen(
    model: &ModelState,
    full: &ImportanceVector,
    forget: &ImportanceVector,
    cfg: &SsdConfig,
) -> Result<(ModelState, UnlearnReport)> {
    cfg.validate()?;
    check_pair(full, forget)?;
    let m = model.param_count();
    if full.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: full.len(),
            context: "importance vector vs model",
        });
    }
    let mut theta = model.parameters();
    let count = dampen_parameters(&mut theta, &full.values, &forget.values, cfg);
    let out = model.with_parameters(&theta)?;
    let report = UnlearnReport {
        percentile_p: f64::NAN,
        chosen_alpha: Some(cfg.alpha),
        lambda: cfg.lambda,
        dampened_count: count,
        dampened_fraction: count as f64 / m as f64,
        param_count: m,
        forget_size: forget.sample_count,
        full_size: full.sample_count,
    };
    Ok((out, report))
}

pub fn assd_unlearn(
    model: &ModelState,
    full: &ImportanceVector,
    forget: &ImportanceVector,
    forget_size: usize,
    full_size: usize,
) -> Result<(ModelState, UnlearnReport)> {
    assd_unlearn_with(model, full, forget, forget_size, full_size, &AssdConfig::default())
}

/// Percentile rule, adaptive alpha, then SSD with `lambda = 1`. An empty
/// forget set returns the model unchanged.
pub fn assd_unlearn_with(
    model: &ModelState,
    full: &ImportanceVector,
    forget: &ImportanceVector,
    forget_size: usize,
    full_size: usize,
    cfg: &AssdConfig,
) -> Result<(ModelState, UnlearnReport)> {
    let p = compute_percentile_p_base(forget_size, full_size, cfg.log_base)?;
    let m = model.param_count();
    if forget_size == 0 {
        return Ok((
            model.clone(),
            UnlearnReport {
                percentile_p: p,
                chosen_alpha: None,
                lambda: 1.0,
                dampened_count: 0,
                dampened_fraction: 0.0,
                param_count: m,
                forget_size,
                full_size,
            },
        ));
    }
    let alpha = select_alpha(full, forget, p, cfg.alpha_mode)?;
    let (out, mut report) = ssd_dampen(model, full, forget, &SsdConfig { alpha, lambda: 1.0 })?;
    report.percentile_p = p;
    report.forget_size = forget_size;
    report.full_size = full_size;
    log::debug!("assd: p={p:.4} alpha={alpha:.6} dampened {}/{m}", report.dampened_count);
    Ok((out, report))
}

/// Data used to score a model during a sweep.
#[derive(Debug, Clone, Copy)]
pub struct EvalSets<'a> {
    pub retain: &'a TabularDataset,
    pub forget: &'a TabularDataset,
    pub test: &'a TabularDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub retain_acc: f64,
    pub forget_acc: f64,
    pub mia: f64,
    pub dampened_count: usize,
}

/// `n` points log-spaced over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// SSD with `lambda = 1` at every alpha of an ascending grid, each on a fresh
/// copy of the model.
pub fn alpha_sweep(
    model: &ModelState,
    full: &ImportanceVector,
    forget: &ImportanceVector,
    alpha_grid: &[f64],
    sets: EvalSets<'_>,
    mia_seed: u64,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("empty alpha grid".into()));
    }
    if alpha_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("alpha grid must be ascending".into()));
    }
    let rows = par::map(alpha_grid, exec, |&alpha| -> Result<SweepRow> {
        let (m, report) = ssd_dampen(model, full, forget, &SsdConfig::new(alpha, 1.0)?)?;
        let inner = Execution::Sequential;
        let mia = mia::evaluate_mia(&m, sets.retain, sets.test, sets.forget, mia_seed, inner)?;
        Ok(SweepRow {
            alpha,
            retain_acc: evaluate_accuracy_with(&m, sets.retain, inner)?,
            forget_acc: evaluate_accuracy_with(&m, sets.forget, inner)?,
            mia: mia.score,
            dampened_count: report.dampened_count,
        })
    });
    rows.into_iter().collect()
}

pub const SWEEP_HEADER: &str = "alpha,retain_acc,forget_acc,mia,dampened_count";

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.alpha, r.retain_acc, r.forget_acc, r.mia, r.dampened_count
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, ModelSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iv(values: Vec<f64>, n: usize) -> ImportanceVector {
        ImportanceVector {
            values,
            sample_count: n,
            model_fingerprint: String::new(),
        }
    }

    fn tiny_model() -> ModelState {
        // 1 -> [1] -> 2 without BN: m = 1 + 1 + 2 + 2 = 6
        let spec = ModelSpec {
            input_dim: 1,
            hidden_layers: vec![1],
            num_classes: 2,
            batch_norm: false,
        };
        init_model(&spec, 0).unwrap()
    }

    #[test]
    fn percentile_p_values() {
        assert_eq!(compute_percentile_p(0, 500).unwrap(), 100.0);
        assert!((compute_percentile_p(10, 1000).unwrap() - (100.0 - 2f64.ln())).abs() < 1e-12);
        assert!((compute_percentile_p(10, 1000).unwrap() - 99.3069).abs() < 1e-4);
        assert!((compute_percentile_p(7, 7).unwrap() - (100.0 - 101f64.ln())).abs() < 1e-12);
        assert!((compute_percentile_p(7, 7).unwrap() - 95.3848).abs() < 1e-4);
        assert!(compute_percentile_p(1, 0).is_err());
        assert!((compute_percentile_p_base(10, 1000, Some(10.0)).unwrap() - (100.0 - 2f64.log10())).abs() < 1e-12);
    }

    #[test]
    fn alpha_from_ratio_percentile() {
        // ratios full/forget = [0.1, 1, 10, 100]
        let full = iv(vec![0.1, 1.0, 10.0, 100.0, 5.0], 10);
        let forget = iv(vec![1.0, 1.0, 1.0, 1.0, 0.0], 1);
        assert!((select_alpha_adaptive(&full, &forget, 75.0).unwrap() - 32.5).abs() < 1e-12);
    }

    #[test]
    fn constant_ratio_gives_constant_alpha() {
        let full = iv(vec![2.0, 4.0, 6.0], 10);
        let forget = iv(vec![1.0, 2.0, 3.0], 1);
        for p in [0.0, 33.0, 99.9, 100.0] {
            assert_eq!(select_alpha_adaptive(&full, &forget, p).unwrap(), 2.0);
        }
    }

    #[test]
    fn all_zero_forget_is_nothing_to_unlearn() {
        let full = iv(vec![1.0, 2.0], 10);
        let forget = iv(vec![0.0, 0.0], 1);
        assert!(matches!(
            select_alpha_adaptive(&full, &forget, 50.0),
            Err(Error::NothingToUnlearn)
        ));
    }

    #[test]
    fn top_fraction_mode_selects_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full: Vec<f64> = (0..1000).map(|_| rng.random_range(0.1..1.0)).collect();
        let forget: Vec<f64> = (0..1000).map(|_| rng.random_range(0.1..1.0)).collect();
        let (full, forget) = (iv(full, 100), iv(forget, 10));
        let alpha = select_alpha(&full, &forget, 99.0, AlphaMode::TopFraction).unwrap();
        let n = selection_mask(&full, &forget, alpha).iter().filter(|&&s| s).count();
        assert!((9..=10).contains(&n), "{n}");
    }

    #[test]
    fn p_100_selects_almost_nothing_on_symmetric_ratios() {
        // log-ratios symmetric around zero: the 100th percentile is the maximum
        // ratio, and only coordinates below its reciprocal are selected.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut full = Vec::new();
        let mut forget = Vec::new();
        for _ in 0..1000 {
            let r: f64 = rng.random_range(-2.0..2.0f64);
            full.push(r.exp());
            forget.push(1.0);
        }
        let (full, forget) = (iv(full, 100), iv(forget, 10));
        let alpha = select_alpha_adaptive(&full, &forget, 100.0).unwrap();
        let max = full.values.iter().copied().fold(0.0, f64::max);
        assert_eq!(alpha, max);
        // brute force count: forget > alpha * full  <=>  full < 1 / max
        let brute = full.values.iter().filter(|&&d| 1.0 > alpha * d).count();
        let got = selection_mask(&full, &forget, alpha).iter().filter(|&&s| s).count();
        assert_eq!(got, brute);
        assert!(got <= 2, "{got}");
    }

    #[test]
    fn dampening_examples() {
        let model = tiny_model();
        let mut theta = model.parameters();
        theta[0] = 2.0;
        theta[1] = 3.0;
        theta[2] = -1.0;
        let model = model.with_parameters(&theta).unwrap();
        let full = iv(vec![1.0, 1.0, 5.0, 0.0, 0.0, 0.0], 10);
        let forget = iv(vec![4.0, 1.5, 4.0, 0.0, 0.0, 0.0], 1);
        let (out, rep) = ssd_dampen(&model, &full, &forget, &SsdConfig::new(2.0, 1.0).unwrap()).unwrap();
        let t = out.parameters();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[1], 3.0);
        assert_eq!(rep.dampened_count, 1);
        // cap branch: selected but beta = 1
        let (out, rep) = ssd_dampen(&model, &full, &forget, &SsdConfig::new(0.5, 1.0).unwrap()).unwrap();
        assert_eq!(out.parameters()[2], -1.0);
        assert_eq!(rep.dampened_count, 3);
        assert_eq!(rep.dampened_fraction, 0.5);
    }

    #[test]
    fn lambda_zero_zeroes_selected() {
        let model = tiny_model();
        let full = iv(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], 10);
        let forget = iv(vec![9.0, 0.5, 9.0, 0.5, 9.0, 0.5], 1);
        let (out, _) = ssd_dampen(&model, &full, &forget, &SsdConfig::new(2.0, 0.0).unwrap()).unwrap();
        let before = model.parameters();
        for (i, v) in out.parameters().iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(*v, 0.0);
            } else {
                assert_eq!(*v, before[i]);
            }
        }
    }

    #[test]
    fn ssd_rejects_bad_input() {
        let model = tiny_model();
        let full = iv(vec![1.0; 6], 10);
        assert!(ssd_dampen(
            &model,
            &full,
            &iv(vec![1.0; 5], 1),
            &SsdConfig {
                alpha: 1.0,
                lambda: 1.0
            }
        )
        .is_err());
        assert!(ssd_dampen(
            &model,
            &full,
            &iv(vec![f64::NAN; 6], 1),
            &SsdConfig {
                alpha: 1.0,
                lambda: 1.0
            }
        )
        .is_err());
        assert!(SsdConfig::new(0.0, 1.0).is_err());
        assert!(SsdConfig::new(1.0, -1.0).is_err());
    }

    #[test]
    fn assd_degenerate_cases_are_identity() {
        let model = init_model(&ModelSpec::new(3, vec![4], 3), 2).unwrap();
        let m = model.param_count();
        let full = iv((0..m).map(|i| 0.1 + i as f64).collect(), 100);
        let empty = iv(vec![0.0; m], 0);
        let (out, rep) = assd_unlearn(&model, &full, &empty, 0, 100).unwrap();
        assert_eq!(out, model);
        assert_eq!(rep.percentile_p, 100.0);
        assert_eq!(rep.dampened_count, 0);

        let (out, rep) = assd_unlearn(&model, &full, &full, 100, 100).unwrap();
        assert_eq!(out, model);
        assert_eq!(rep.chosen_alpha, Some(1.0));
        assert_eq!(rep.dampened_count, 0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.1, 100.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[19] - 100.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    fn brute_force(theta: &[f64], full: &[f64], forget: &[f64], alpha: f64, lambda: f64) -> (Vec<f64>, Vec<bool>) {
        let mut out = theta.to_vec();
        let mut sel = vec![false; theta.len()];
        for i in 0..theta.len() {
            if forget[i] > alpha * full[i] {
                sel[i] = true;
                let beta = f64::min(lambda * full[i] / forget[i], 1.0);
                out[i] = beta * theta[i];
            }
        }
        (out, sel)
    }

    proptest! {
        #[test]
        fn dampening_properties(
            seed in any::<u64>(),
            a1 in 0.01f64..50.0,
            a2 in 0.01f64..50.0,
            lambda in 0.0f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 200;
            let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let full: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.0..2.0) }).collect();
            let forget: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.0..8.0) }).collect();
            let cfg = SsdConfig::new(a1, lambda).unwrap();
            let mut got = theta.clone();
            let count = dampen_parameters(&mut got, &full, &forget, &cfg);
            let (want, sel) = brute_force(&theta, &full, &forget, a1, lambda);
            prop_assert_eq!(&got, &want);
            prop_assert_eq!(count, sel.iter().filter(|&&s| s).count());
            for i in 0..n {
                prop_assert!(got[i].abs() <= theta[i].abs());
                if !sel[i] {
                    prop_assert_eq!(got[i], theta[i]);
                }
                if lambda > 0.0 && full[i] > 0.0 {
                    prop_assert!(got[i].signum() == theta[i].signum());
                }
            }
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let fi = iv(full.clone(), 10);
            let fo = iv(forget.clone(), 1);
            let s_lo = selection_mask(&fi, &fo, lo);
            let s_hi = selection_mask(&fi, &fo, hi);
            for i in 0..n {
                prop_assert!(!s_hi[i] || s_lo[i]);
            }
        }
    }
}
