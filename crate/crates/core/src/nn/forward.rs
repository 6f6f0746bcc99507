use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::model::{BatchNorm, ModelState, ParamKind};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Rows per eval-mode forward chunk. Fixed so results never depend on the
/// execution strategy.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BN layers.
    Train,
    /// Running statistics in BN layers.
    Eval,
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// `-log softmax(z)[label]`, computed via log-sum-exp.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn check_width(model: &ModelState, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != model.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.spec.input_dim,
            actual: x.ncols(),
            context: "feature width",
        });
    }
    Ok(())
}

fn affine(h: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut z = h.dot(&w.t());
    z += b;
    z
}

pub(crate) struct LayerCache {
    input: Array2<f64>,
    /// Normalized pre-activation (BN only).
    xhat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    /// Input to the ReLU.
    pre_relu: Array2<f64>,
}

pub(crate) struct ForwardPass {
    pub logits: Array2<f64>,
    caches: Vec<LayerCache>,
    last_hidden: Array2<f64>,
    /// Per BN layer: (batch mean, biased batch variance), train mode only.
    pub batch_stats: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

struct BatchNormTrain {
    y: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

fn batch_norm_train(z: &Array2<f64>, bn: &BatchNorm) -> BatchNormTrain {
    let n = z.nrows() as f64;
    let mean = z.sum_axis(Axis(0)) / n;
    let centered = z - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let inv_std = var.mapv(|v| 1.0 / (v + BatchNorm::EPS).sqrt());
    let xhat = &centered * &inv_std;
    let y = &xhat * &bn.scale + &bn.shift;
    BatchNormTrain {
        y,
        xhat,
        inv_std,
        mean,
        var,
    }
}

fn batch_norm_eval(z: &Array2<f64>, bn: &BatchNorm) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BatchNorm::EPS).sqrt());
    let xhat = (z - &bn.running_mean) * &inv_std;
    let y = &xhat * &bn.scale + &bn.shift;
    (y, xhat, inv_std)
}

pub(crate) fn forward_pass(
    model: &ModelState,
    x: ArrayView2<f64>,
    mode: Mode,
    keep_cache: bool,
) -> Result<ForwardPass> {
    check_width(model, &x)?;
    if mode == Mode::Train && model.spec.batch_norm && x.nrows() < 2 {
        return Err(Error::BatchTooSmall(x.nrows()));
    }
    let mut h = x.to_owned();
    let mut caches = Vec::new();
    let mut batch_stats = Vec::new();
    for layer in &model.hidden {
        let z = affine(&h, &layer.dense.weight, &layer.dense.bias);
        let (pre, xhat, inv_std) = match (&layer.bn, mode) {
            (None, _) => {
                batch_stats.push(None);
                (z, None, None)
            }
            (Some(bn), Mode::Train) => {
                let BatchNormTrain {
                    y,
                    xhat,
                    inv_std,
                    mean,
                    var,
                } = batch_norm_train(&z, bn);
                batch_stats.push(Some((mean, var)));
                (y, Some(xhat), Some(inv_std))
            }
            (Some(bn), Mode::Eval) => {
                let (y, xhat, inv_std) = batch_norm_eval(&z, bn);
                batch_stats.push(None);
                (y, Some(xhat), Some(inv_std))
            }
        };
        let a = pre.mapv(|v| v.max(0.0));
        let input = std::mem::replace(&mut h, a);
        if keep_cache {
            caches.push(LayerCache {
                input,
                xhat,
                inv_std,
                pre_relu: pre,
            });
        }
    }
    let logits = affine(&h, &model.output.weight, &model.output.bias);
    Ok(ForwardPass {
        logits,
        caches,
        last_hidden: h,
        batch_stats,
    })
}

/// Class probabilities, one softmax row per input row.
pub fn forward(model: &ModelState, x: ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
    match mode {
        Mode::Train => Ok(softmax_rows(&forward_pass(model, x, mode, false)?.logits)),
        Mode::Eval => {
            let logits = eval_logits(model, x, Execution::Sequential)?;
            Ok(softmax_rows(&logits))
        }
    }
}

/// Eval-mode logits computed in fixed-size row chunks.
pub fn eval_logits(model: &ModelState, x: ArrayView2<f64>, exec: Execution) -> Result<Array2<f64>> {
    check_width(model, &x)?;
    let n = x.nrows();
    let ranges = par::chunk_ranges(n, EVAL_CHUNK);
    let parts = par::map(&ranges, exec, |r| {
        forward_pass(model, x.slice(s![r.clone(), ..]), Mode::Eval, false).map(|p| p.logits)
    });
    let mut out = Array2::zeros((n, model.spec.num_classes));
    for (r, part) in ranges.iter().zip(parts) {
        out.slice_mut(s![r.clone(), ..]).assign(&part?);
    }
    Ok(out)
}

pub(crate) struct BatchGradient {
    pub mean_loss: f64,
    /// Gradient of the mean loss, in parameter layout order.
    pub grad: Vec<f64>,
    pub batch_stats: Vec<Option<(Array1<f64>, Array1<f64>)>>,
}

/// Mean cross-entropy over the batch and its gradient.
pub(crate) fn batch_gradient(
    model: &ModelState,
    x: ArrayView2<f64>,
    labels: &[usize],
    mode: Mode,
) -> Result<BatchGradient> {
    let k = model.spec.num_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: k,
        });
    }
    if labels.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: labels.len(),
            context: "label count",
        });
    }
    let pass = forward_pass(model, x, mode, true)?;
    let n = x.nrows() as f64;
    let mut loss = 0.0;
    for (row, &y) in pass.logits.rows().into_iter().zip(labels) {
        loss += cross_entropy(row.as_slice().expect("contiguous"), y);
    }
    let mut dlogits = softmax_rows(&pass.logits);
    for (i, &y) in labels.iter().enumerate() {
        dlogits[[i, y]] -= 1.0;
    }
    dlogits.mapv_inplace(|v| v / n);

    // Gradients per segment, collected back to front.
    let mut segs: Vec<Vec<f64>> = Vec::new();
    segs.push(dlogits.sum_axis(Axis(0)).to_vec());
    segs.push(dlogits.t().dot(&pass.last_hidden).into_raw_vec_and_offset().0);
    let mut da = dlogits.dot(&model.output.weight);

    for (li, (layer, cache)) in model.hidden.iter().zip(&pass.caches).enumerate().rev() {
        let mut dy = da;
        dy.zip_mut_with(&cache.pre_relu, |g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        let dz = match (&layer.bn, &cache.xhat, &cache.inv_std) {
            (Some(bn), Some(xhat), Some(inv_std)) => {
                let dshift = dy.sum_axis(Axis(0));
                let dscale = (&dy * xhat).sum_axis(Axis(0));
                let dxhat = &dy * &bn.scale;
                let dz = match mode {
                    Mode::Eval => dxhat * inv_std,
                    Mode::Train => {
                        let m = dy.nrows() as f64;
                        let sum_dxhat = dxhat.sum_axis(Axis(0));
                        let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                        let mut dz = dxhat * m - &sum_dxhat - xhat * &sum_dxhat_xhat;
                        dz *= &(inv_std / m);
                        dz
                    }
                };
                segs.push(dshift.to_vec());
                segs.push(dscale.to_vec());
                dz
            }
            _ => dy,
        };
        segs.push(dz.sum_axis(Axis(0)).to_vec());
        segs.push(dz.t().dot(&cache.input).into_raw_vec_and_offset().0);
        if li > 0 {
            da = dz.dot(&layer.dense.weight);
        } else {
            da = Array2::zeros((0, 0));
        }
    }
    let mut grad = Vec::with_capacity(model.param_count());
    for seg in segs.into_iter().rev() {
        grad.extend(seg);
    }
    debug_assert_eq!(grad.len(), model.param_count());
    Ok(BatchGradient {
        mean_loss: loss / n,
        grad,
        batch_stats: pass.batch_stats,
    })
}

/// Which flattened coordinates receive L2 weight decay (linear weights only).
pub(crate) fn decay_mask(model: &ModelState) -> Vec<bool> {
    let mut mask = vec![false; model.param_count()];
    for seg in model.spec.layout() {
        if seg.kind == ParamKind::Weight {
            mask[seg.offset..seg.offset + seg.len].fill(true);
        }
    }
    mask
}
