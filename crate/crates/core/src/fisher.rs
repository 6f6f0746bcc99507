//! Diagonal empirical Fisher information: the per-parameter mean of squared
//! per-sample gradients, taken at the observed labels.

use std::path::Path;

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::format::TextDoc;
use crate::nn::{per_sample_grad_into, GradWorkspace, ModelState};
use crate::par::{self, Execution};

pub const IMPORTANCE_TAG: &str = "dampen-fim-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector {
    /// One entry per trainable parameter, aligned with the model layout.
    pub values: Vec<f64>,
    pub sample_count: usize,
    /// Fingerprint of the checkpoint the importances were computed from.
    pub model_fingerprint: String,
}

impl ImportanceVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("importance vector (negative or non-finite entry)"));
        }
        Ok(())
    }
}

/// Sum of squared gradients over `rows`, folded in row order.
fn chunk_sum(model: &ModelState, data: &TabularDataset, rows: std::ops::Range<usize>) -> Result<Vec<f64>> {
    let m = model.param_count();
    let mut ws = GradWorkspace::new(model);
    let mut g = vec![0.0; m];
    let mut acc = vec![0.0; m];
    for i in rows {
        per_sample_grad_into(model, data.row(i), data.labels[i], &mut ws, &mut g)?;
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi * gi;
        }
    }
    Ok(acc)
}

pub fn compute_importances(model: &ModelState, data: &TabularDataset) -> Result<ImportanceVector> {
    compute_importances_with(model, data, Execution::default())
}

/// Chunks of [`par::CHUNK_ROWS`] rows are reduced independently and their
/// partial sums added in chunk order, so the result does not depend on `exec`.
pub fn compute_importances_with(
    model: &ModelState,
    data: &TabularDataset,
    exec: Execution,
) -> Result<ImportanceVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != model.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.spec.input_dim,
            actual: data.dim(),
            context: "feature width",
        });
    }
    data.check_labels(model.spec.num_classes)?;
    let partials = par::map_chunks(data.len(), exec, |r| chunk_sum(model, data, r));
    let mut total = vec![0.0; model.param_count()];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    let n = data.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    let iv = ImportanceVector {
        values: total,
        sample_count: data.len(),
        model_fingerprint: model.fingerprint(),
    };
    iv.validate()?;
    Ok(iv)
}

/// Per-sample gradients computed elsewhere, tagged with their model.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedGradients {
    pub model_fingerprint: String,
    pub rows: Vec<Vec<f64>>,
}

/// Importances from caller-supplied gradients. The gradients must belong to `model`.
pub fn importances_from_gradients(model: &ModelState, grads: &PrecomputedGradients) -> Result<ImportanceVector> {
    let fp = model.fingerprint();
    if grads.model_fingerprint != fp {
        return Err(Error::InvalidArgument(format!(
            "gradients were computed for model {}, not {fp}",
            grads.model_fingerprint
        )));
    }
    if grads.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = model.param_count();
    let mut total = vec![0.0; m];
    for chunk in grads.rows.chunks(par::CHUNK_ROWS) {
        let mut acc = vec![0.0; m];
        for g in chunk {
            if g.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    actual: g.len(),
                    context: "precomputed gradient",
                });
            }
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += gi * gi;
            }
        }
        for (t, a) in total.iter_mut().zip(acc) {
            *t += a;
        }
    }
    let n = grads.rows.len() as f64;
    total.iter_mut().for_each(|v| *v /= n);
    Ok(ImportanceVector {
        values: total,
        sample_count: grads.rows.len(),
        model_fingerprint: fp,
    })
}

pub fn persist_importances(iv: &ImportanceVector, path: &Path) -> Result<()> {
    let mut doc = TextDoc::new(IMPORTANCE_TAG);
    doc.field("sample_count", iv.sample_count)
        .field("model_fingerprint", &iv.model_fingerprint)
        .array("importance", &iv.values);
    doc.write_to(path)
}

/// Loads an importance file. With `expected_len`, a length mismatch is an error.
pub fn load_importances(path: &Path, expected_len: Option<usize>) -> Result<ImportanceVector> {
    let doc = TextDoc::read_from(path, IMPORTANCE_TAG)?;
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    let values = doc
        .get_array("importance")
        .ok_or_else(|| corrupt("missing importance array".into()))?
        .to_vec();
    let sample_count = doc
        .get("sample_count")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("missing or bad sample_count".into()))?;
    let model_fingerprint = doc
        .get("model_fingerprint")
        .ok_or_else(|| corrupt("missing model_fingerprint".into()))?
        .to_string();
    if let Some(m) = expected_len {
        if values.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: values.len(),
                context: "importance vector length",
            });
        }
    }
    let iv = ImportanceVector {
        values,
        sample_count,
        model_fingerprint,
    };
    iv.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(iv)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FingerprintCheck {
    Match,
    Mismatch { file: String, model: String },
}

/// Loads importances for `model`; a fingerprint mismatch is reported, not fatal.
pub fn load_importances_for(path: &Path, model: &ModelState) -> Result<(ImportanceVector, FingerprintCheck)> {
    let iv = load_importances(path, Some(model.param_count()))?;
    let fp = model.fingerprint();
    let check = if iv.model_fingerprint == fp {
        FingerprintCheck::Match
    } else {
        log::warn!(
            "{} was computed for model {} but the checkpoint is {fp}",
            path.display(),
            iv.model_fingerprint
        );
        FingerprintCheck::Mismatch {
            file: iv.model_fingerprint.clone(),
            model: fp,
        }
    };
    Ok((iv, check))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::generate_blobs;
    use crate::nn::{init_model, per_sample_grad, ModelSpec};

    fn setup() -> (ModelState, TabularDataset) {
        let data = generate_blobs(150, 3, 3, 2).unwrap();
        let mut m = init_model(&ModelSpec::new(3, vec![5, 4], 3), 6).unwrap();
        for l in &mut m.hidden {
            let bn = l.bn.as_mut().unwrap();
            bn.running_var.fill(4.0);
            bn.running_mean.fill(0.5);
        }
        (m, data)
    }

    #[test]
    fn mean_of_squares_definition() {
        let (m, data) = setup();
        let iv = compute_importances(&m, &data).unwrap();
        let mut oracle = vec![0.0; m.param_count()];
        for i in 0..data.len() {
            let g = per_sample_grad(&m, data.row(i), data.labels[i]).unwrap();
            for (o, gi) in oracle.iter_mut().zip(&g) {
                *o += gi * gi / data.len() as f64;
            }
        }
        for (a, b) in iv.values.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300) + 1e-300, "{a} vs {b}");
        }
        assert_eq!(iv.sample_count, 150);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let (m, data) = setup();
        let a = compute_importances_with(&m, &data, Execution::Sequential).unwrap();
        let b = compute_importances_with(&m, &data, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_samples_with_gradients_one_and_three() {
        let (m, _) = setup();
        let grads = PrecomputedGradients {
            model_fingerprint: m.fingerprint(),
            rows: vec![
                {
                    let mut g = vec![0.0; m.param_count()];
                    g[0] = 1.0;
                    g
                },
                {
                    let mut g = vec![0.0; m.param_count()];
                    g[0] = 3.0;
                    g
                },
            ],
        };
        let iv = importances_from_gradients(&m, &grads).unwrap();
        assert_eq!(iv.values[0], 5.0);
        assert!(iv.values[1..].iter().all(|&v| v == 0.0));
        let wrong = PrecomputedGradients {
            model_fingerprint: "x".into(),
            ..grads
        };
        assert!(importances_from_gradients(&m, &wrong).is_err());
    }

    #[test]
    fn vanishing_gradients_give_zero() {
        let (mut m, data) = setup();
        // softmax saturates to exactly 1 for class 0
        m.output.weight.fill(0.0);
        m.output.bias = ndarray::array![800.0, 0.0, 0.0];
        let mut d = data.clone();
        d.labels.fill(0);
        let iv = compute_importances(&m, &d).unwrap();
        assert!(iv.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicating_rows_keeps_the_mean() {
        let (m, data) = setup();
        let idx: Vec<usize> = (0..data.len()).chain(0..data.len()).collect();
        let a = compute_importances(&m, &data).unwrap();
        let b = compute_importances(&m, &data.select(&idx)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn permutation_invariant() {
        let (m, data) = setup();
        let idx: Vec<usize> = (0..data.len()).rev().collect();
        let a = compute_importances(&m, &data).unwrap();
        let b = compute_importances(&m, &data.select(&idx)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn empty_dataset() {
        let (m, data) = setup();
        assert!(matches!(
            compute_importances(&m, &data.select(&[])),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn persist_round_trip_and_errors() {
        let (m, data) = setup();
        let iv = compute_importances(&m, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fim");
        persist_importances(&iv, &path).unwrap();
        let back = load_importances(&path, Some(m.param_count())).unwrap();
        assert_eq!(back, iv);
        for (a, b) in back.values.iter().zip(&iv.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(matches!(
            load_importances(&path, Some(m.param_count() + 1)),
            Err(Error::DimensionMismatch { .. })
        ));

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_importances(&path, None), Err(Error::CorruptFile { .. })));

        std::fs::write(&path, text.replacen(IMPORTANCE_TAG, "dampen-fim-v0", 1)).unwrap();
        assert!(matches!(
            load_importances(&path, None),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn fingerprint_mismatch_is_reported() {
        let (m, data) = setup();
        let iv = compute_importances(&m, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fim");
        persist_importances(&iv, &path).unwrap();
        assert_eq!(load_importances_for(&path, &m).unwrap().1, FingerprintCheck::Match);
        let other = init_model(&m.spec, 99).unwrap();
        assert!(matches!(
            load_importances_for(&path, &other).unwrap().1,
            FingerprintCheck::Mismatch { .. }
        ));
    }
}
