use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::error::{Error, Result};

/// Everything needed to replay a label-corruption run: which training rows
/// were flipped and what they were before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorScenario {
    pub seed: u64,
    pub error_rate: f64,
    pub n_train: usize,
    /// Positions in the training split, ascending.
    pub flipped_indices: Vec<usize>,
    pub original_labels: Vec<usize>,
    pub new_labels: Vec<usize>,
}

impl ErrorScenario {
    /// Forget-set positions (the flipped rows).
    pub fn forget_indices(&self) -> &[usize] {
        &self.flipped_indices
    }

    /// Retain-set positions: every training row that was not flipped.
    pub fn retain_indices(&self) -> Vec<usize> {
        let mut flipped = vec![false; self.n_train];
        for &i in &self.flipped_indices {
            flipped[i] = true;
        }
        (0..self.n_train).filter(|&i| !flipped[i]).collect()
    }

    /// Re-applies the corruption to the clean training split.
    pub fn apply(&self, clean: &TabularDataset) -> Result<TabularDataset> {
        if clean.len() != self.n_train {
            return Err(Error::DimensionMismatch {
                expected: self.n_train,
                actual: clean.len(),
                context: "scenario training-split size",
            });
        }
        let mut out = clean.clone();
        for ((&i, &orig), &new) in self
            .flipped_indices
            .iter()
            .zip(&self.original_labels)
            .zip(&self.new_labels)
        {
            if out.labels[i] != orig {
                return Err(Error::InvalidArgument(format!(
                    "scenario expects label {orig} at row {i}, found {}",
                    out.labels[i]
                )));
            }
            out.labels[i] = new;
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad scenario record: {e}")))
    }
}

/// Flips exactly `round(rate * n)` distinct labels, each to a uniformly drawn
/// different class.
pub fn inject_label_errors(train: &TabularDataset, rate: f64, seed: u64) -> Result<(TabularDataset, ErrorScenario)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("error rate {rate} outside [0, 1]")));
    }
    let k = train.num_classes();
    if k < 2 {
        return Err(Error::InvalidArgument("label flipping needs at least 2 classes".into()));
    }
    let n = train.len();
    let count = ((rate * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, count).into_vec();
    idx.sort_unstable();
    let mut out = train.clone();
    let mut original = Vec::with_capacity(count);
    let mut new_labels = Vec::with_capacity(count);
    for &i in &idx {
        let old = out.labels[i];
        let r = rng.random_range(0..k - 1);
        let new = if r >= old { r + 1 } else { r };
        out.labels[i] = new;
        original.push(old);
        new_labels.push(new);
    }
    let scenario = ErrorScenario {
        seed,
        error_rate: rate,
        n_train: n,
        flipped_indices: idx,
        original_labels: original,
        new_labels,
    };
    Ok((out, scenario))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::generate_blobs;
    use proptest::prelude::*;

    #[test]
    fn zero_rate_is_identity() {
        let ds = generate_blobs(100, 2, 3, 0).unwrap();
        let (out, sc) = inject_label_errors(&ds, 0.0, 1).unwrap();
        assert_eq!(out, ds);
        assert!(sc.flipped_indices.is_empty());
        assert_eq!(sc.retain_indices().len(), 100);
    }

    #[test]
    fn exact_flip_count() {
        let ds = generate_blobs(1000, 2, 3, 0).unwrap();
        let (out, sc) = inject_label_errors(&ds, 0.025, 7).unwrap();
        assert_eq!(sc.flipped_indices.len(), 25);
        let changed = out.labels.iter().zip(&ds.labels).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 25);
        for (&i, &o) in sc.flipped_indices.iter().zip(&sc.original_labels) {
            assert_eq!(ds.labels[i], o);
            assert_ne!(out.labels[i], o);
        }
    }

    #[test]
    fn half_rounds_away_from_zero() {
        let ds = generate_blobs(10, 2, 2, 0).unwrap();
        let (_, sc) = inject_label_errors(&ds, 0.25, 0).unwrap();
        assert_eq!(sc.flipped_indices.len(), 3);
    }

    #[test]
    fn same_seed_same_flips() {
        let ds = generate_blobs(500, 2, 3, 0).unwrap();
        let a = inject_label_errors(&ds, 0.1, 3).unwrap();
        let b = inject_label_errors(&ds, 0.1, 3).unwrap();
        assert_eq!(a, b);
        let c = inject_label_errors(&ds, 0.1, 4).unwrap();
        assert_ne!(a.1.flipped_indices, c.1.flipped_indices);
    }

    #[test]
    fn bad_rate() {
        let ds = generate_blobs(10, 2, 2, 0).unwrap();
        assert!(inject_label_errors(&ds, 1.5, 0).is_err());
        assert!(inject_label_errors(&ds, -0.1, 0).is_err());
    }

    #[test]
    fn replay_from_json() {
        let ds = generate_blobs(200, 2, 3, 0).unwrap();
        let (out, sc) = inject_label_errors(&ds, 0.05, 9).unwrap();
        let back = ErrorScenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(back.apply(&ds).unwrap(), out);
    }

    proptest! {
        #[test]
        fn forget_and_retain_partition(rate in 0.0f64..=1.0, seed in any::<u64>()) {
            let ds = generate_blobs(60, 2, 4, 1).unwrap();
            let (out, sc) = inject_label_errors(&ds, rate, seed).unwrap();
            prop_assert_eq!(sc.flipped_indices.len(), (rate * 60.0).round() as usize);
            let retain = sc.retain_indices();
            prop_assert_eq!(retain.len() + sc.forget_indices().len(), 60);
            for &i in &retain {
                prop_assert_eq!(out.labels[i], ds.labels[i]);
                prop_assert!(sc.forget_indices().binary_search(&i).is_err());
            }
            for &i in sc.forget_indices() {
                prop_assert_ne!(out.labels[i], ds.labels[i]);
            }
        }
    }
}
