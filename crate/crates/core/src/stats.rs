//! Small statistics toolkit: linear-interpolation percentiles, summary
//! moments and the paired Wilcoxon signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Percentile with linear interpolation between order statistics
/// (Hyndman-Fan type 7, numpy's default). `p` is in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty population".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by `n`).
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn variance(values: &[f64]) -> f64 {
    std_dev(values).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences `b - a`.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub z: f64,
    pub p_value: f64,
}

/// Two-sided Wilcoxon signed-rank test on paired samples using the normal
/// approximation with tie-corrected variance and no continuity correction.
/// Zero differences are dropped; if none remain `p = 1`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
            context: "paired samples",
        });
    }
    if a.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "signed-rank test needs at least 5 pairs, got {}",
            a.len()
        )));
    }
    let mut diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            w_minus: 0.0,
            n_used: 0,
            z: 0.0,
            p_value: 1.0,
        });
    }
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut w_plus = 0.0;
    let mut w_minus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && diffs[j].abs() == diffs[i].abs() {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let rank = (i + 1 + j) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        for d in &diffs[i..j] {
            if *d > 0.0 {
                w_plus += rank;
            } else {
                w_minus += rank;
            }
        }
        i = j;
    }
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let t = w_plus.min(w_minus);
    let z = if var > 0.0 { (t - mu) / var.sqrt() } else { 0.0 };
    let normal = Normal::standard();
    let p = (2.0 * normal.cdf(-z.abs())).clamp(0.0, 1.0);
    Ok(WilcoxonResult {
        w_plus,
        w_minus,
        n_used: n,
        z,
        p_value: p,
    })
}

/// p-value of the baseline-vs-unlearn paired comparison.
pub fn significance_test(baseline: &[f64], unlearn: &[f64]) -> Result<f64> {
    wilcoxon_signed_rank(baseline, unlearn).map(|r| r.p_value)
}
