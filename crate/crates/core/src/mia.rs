//! Loss-based membership inference: a one-feature logistic regression that
//! separates training members from held-out rows by their cross-entropy loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, eval_logits, ModelState};
use crate::par::Execution;

const ITERATIONS: usize = 1000;
const STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    /// Coefficient on the standardized loss.
    pub weight: f64,
    pub bias: f64,
    pub feature_mean: f64,
    pub feature_std: f64,
    /// All training losses were identical; the attacker answers a constant.
    pub degenerate: bool,
    /// Constant answer of a degenerate attacker.
    pub default_member: bool,
}

impl AttackModel {
    fn logit(&self, loss: f64) -> f64 {
        self.weight * (loss - self.feature_mean) / self.feature_std + self.bias
    }

    /// Probability 0.5 and above counts as member.
    pub fn is_member(&self, loss: f64) -> bool {
        if self.degenerate {
            return self.default_member;
        }
        self.logit(loss) >= 0.0
    }

    pub fn accuracy(&self, members: &[f64], nonmembers: &[f64]) -> f64 {
        let hits = members.iter().filter(|&&l| self.is_member(l)).count()
            + nonmembers.iter().filter(|&&l| !self.is_member(l)).count();
        hits as f64 / (members.len() + nonmembers.len()) as f64
    }
}

/// Eval-mode cross-entropy of every row.
pub fn per_sample_losses(model: &ModelState, data: &TabularDataset, exec: Execution) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_labels(model.spec.num_classes)?;
    let logits = eval_logits(model, data.features.view(), exec)?;
    Ok(logits
        .rows()
        .into_iter()
        .zip(&data.labels)
        .map(|(r, &y)| cross_entropy(r.as_slice().expect("contiguous"), y))
        .collect())
}

fn downsample(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if values.len() <= k {
        return values.to_vec();
    }
    let mut idx = rand::seq::index::sample(rng, values.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| values[i]).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Balanced (larger class down-sampled with `seed`), standardized, full-batch
/// gradient descent for a fixed 1000 steps of size 0.1.
pub fn fit_attacker(member_losses: &[f64], nonmember_losses: &[f64], seed: u64) -> Result<AttackModel> {
    if member_losses.is_empty() || nonmember_losses.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let default_member = member_losses.len() >= nonmember_losses.len();
    let k = member_losses.len().min(nonmember_losses.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members = downsample(member_losses, k, &mut rng);
    let nonmembers = downsample(nonmember_losses, k, &mut rng);

    let all: Vec<f64> = members.iter().chain(&nonmembers).copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var.is_nan() || var <= 0.0 {
        return Ok(AttackModel {
            weight: 0.0,
            bias: 0.0,
            feature_mean: mean,
            feature_std: 1.0,
            degenerate: true,
            default_member,
        });
    }
    let std = var.sqrt();
    let xs: Vec<(f64, f64)> = members
        .iter()
        .map(|&l| ((l - mean) / std, 1.0))
        .chain(nonmembers.iter().map(|&l| ((l - mean) / std, 0.0)))
        .collect();
    let (mut w, mut b) = (0.0, 0.0);
    for _ in 0..ITERATIONS {
        let (mut gw, mut gb) = (0.0, 0.0);
        for &(x, y) in &xs {
            let err = sigmoid(w * x + b) - y;
            gw += err * x;
            gb += err;
        }
        w -= STEP * gw / n;
        b -= STEP * gb / n;
    }
    if !(w.is_finite() && b.is_finite()) {
        return Err(Error::NonFinite("attack model"));
    }
    Ok(AttackModel {
        weight: w,
        bias: b,
        feature_mean: mean,
        feature_std: std,
        degenerate: false,
        default_member,
    })
}

/// Percentage of forget rows classified as members.
pub fn mia_score(attacker: &AttackModel, forget_losses: &[f64]) -> Result<f64> {
    if forget_losses.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let members = forget_losses.iter().filter(|&&l| attacker.is_member(l)).count();
    Ok(100.0 * members as f64 / forget_losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaOutcome {
    pub score: f64,
    pub attacker: AttackModel,
}

/// Attacker trained on retain-set members vs test-set non-members, scored on
/// the forget set.
pub fn evaluate_mia(
    model: &ModelState,
    retain: &TabularDataset,
    test: &TabularDataset,
    forget: &TabularDataset,
    seed: u64,
    exec: Execution,
) -> Result<MiaOutcome> {
    let members = per_sample_losses(model, retain, exec)?;
    let nonmembers = per_sample_losses(model, test, exec)?;
    let attacker = fit_attacker(&members, &nonmembers, seed)?;
    let score = mia_score(&attacker, &per_sample_losses(model, forget, exec)?)?;
    Ok(MiaOutcome { score, attacker })
}
