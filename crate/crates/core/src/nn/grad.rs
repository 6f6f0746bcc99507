//! Per-sample gradients of the negative log-likelihood in eval mode.
//!
//! Scalar loops over the flattened layout. The Fisher accumulation and its
//! test oracle both go through [`per_sample_grad_into`], so their values
//! agree bit for bit.

use super::model::ModelState;
use crate::error::{Error, Result};

/// Scratch buffers reused across samples.
pub struct GradWorkspace {
    /// Per hidden layer: layer input.
    inputs: Vec<Vec<f64>>,
    /// Per hidden layer: normalized pre-activation (== z without BN).
    xhat: Vec<Vec<f64>>,
    /// Per hidden layer: ReLU input.
    pre: Vec<Vec<f64>>,
    last: Vec<f64>,
    logits: Vec<f64>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl GradWorkspace {
    pub fn new(model: &ModelState) -> Self {
        let spec = &model.spec;
        let mut widths_in = vec![spec.input_dim];
        widths_in.extend(spec.hidden_layers.iter().copied().take(spec.hidden_layers.len() - 1));
        let max_w = spec
            .hidden_layers
            .iter()
            .copied()
            .chain([spec.num_classes])
            .max()
            .unwrap_or(1);
        GradWorkspace {
            inputs: widths_in.iter().map(|&w| vec![0.0; w]).collect(),
            xhat: spec.hidden_layers.iter().map(|&w| vec![0.0; w]).collect(),
            pre: spec.hidden_layers.iter().map(|&w| vec![0.0; w]).collect(),
            last: vec![0.0; *spec.hidden_layers.last().unwrap()],
            logits: vec![0.0; spec.num_classes],
            delta: vec![0.0; max_w],
            delta_prev: vec![0.0; max_w],
        }
    }
}

fn check_sample(model: &ModelState, x: &[f64], y: usize) -> Result<()> {
    if x.len() != model.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.spec.input_dim,
            actual: x.len(),
            context: "feature width",
        });
    }
    if y >= model.spec.num_classes {
        return Err(Error::LabelOutOfRange {
            label: y,
            num_classes: model.spec.num_classes,
        });
    }
    Ok(())
}

/// Writes `∇θ -log p(y|x)` into `out` (length `m`) and returns the loss.
pub fn per_sample_grad_into(
    model: &ModelState,
    x: &[f64],
    y: usize,
    ws: &mut GradWorkspace,
    out: &mut [f64],
) -> Result<f64> {
    check_sample(model, x, y)?;
    let m = model.param_count();
    if out.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: out.len(),
            context: "gradient buffer",
        });
    }

    // forward
    ws.inputs[0].copy_from_slice(x);
    for (l, layer) in model.hidden.iter().enumerate() {
        let w = &layer.dense.weight;
        let fan_in = w.ncols();
        let wd = w.as_slice().expect("standard layout");
        for o in 0..w.nrows() {
            let row = &wd[o * fan_in..(o + 1) * fan_in];
            let mut z = layer.dense.bias[o];
            for (wi, hi) in row.iter().zip(&ws.inputs[l]) {
                z += wi * hi;
            }
            let pre = match &layer.bn {
                Some(bn) => {
                    let inv_std = 1.0 / (bn.running_var[o] + super::model::BatchNorm::EPS).sqrt();
                    let xh = (z - bn.running_mean[o]) * inv_std;
                    ws.xhat[l][o] = xh;
                    bn.scale[o] * xh + bn.shift[o]
                }
                None => {
                    ws.xhat[l][o] = z;
                    z
                }
            };
            ws.pre[l][o] = pre;
            let a = pre.max(0.0);
            if l + 1 < model.hidden.len() {
                ws.inputs[l + 1][o] = a;
            } else {
                ws.last[o] = a;
            }
        }
    }
    let wo = &model.output.weight;
    let fan_in = wo.ncols();
    let wod = wo.as_slice().expect("standard layout");
    for k in 0..wo.nrows() {
        let mut z = model.output.bias[k];
        for (wi, hi) in wod[k * fan_in..(k + 1) * fan_in].iter().zip(&ws.last) {
            z += wi * hi;
        }
        ws.logits[k] = z;
    }
    let loss = super::forward::cross_entropy(&ws.logits, y);

    // backward; d logits = softmax - onehot
    let kc = model.spec.num_classes;
    let max = ws.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for k in 0..kc {
        let e = (ws.logits[k] - max).exp();
        ws.delta[k] = e;
        sum += e;
    }
    for k in 0..kc {
        ws.delta[k] /= sum;
    }
    ws.delta[y] -= 1.0;

    let layout = model.spec.layout();
    let mut seg = layout.len();
    // output bias, output weight
    seg -= 1;
    let ob = &layout[seg];
    out[ob.offset..ob.offset + ob.len].copy_from_slice(&ws.delta[..kc]);
    seg -= 1;
    let ow = &layout[seg];
    for k in 0..kc {
        let d = ws.delta[k];
        let dst = &mut out[ow.offset + k * fan_in..ow.offset + (k + 1) * fan_in];
        for (g, h) in dst.iter_mut().zip(&ws.last) {
            *g = d * h;
        }
    }
    // d last hidden activation
    for j in 0..fan_in {
        let mut s = 0.0;
        for k in 0..kc {
            s += ws.delta[k] * wod[k * fan_in + j];
        }
        ws.delta_prev[j] = s;
    }
    std::mem::swap(&mut ws.delta, &mut ws.delta_prev);

    for (l, layer) in model.hidden.iter().enumerate().rev() {
        let width = layer.dense.weight.nrows();
        // through ReLU
        for o in 0..width {
            if ws.pre[l][o] <= 0.0 {
                ws.delta[o] = 0.0;
            }
        }
        if let Some(bn) = &layer.bn {
            seg -= 1;
            let shift = &layout[seg];
            seg -= 1;
            let scale = &layout[seg];
            for o in 0..width {
                let d = ws.delta[o];
                out[shift.offset + o] = d;
                out[scale.offset + o] = d * ws.xhat[l][o];
                let inv_std = 1.0 / (bn.running_var[o] + super::model::BatchNorm::EPS).sqrt();
                ws.delta[o] = d * bn.scale[o] * inv_std;
            }
        }
        seg -= 1;
        let b = &layout[seg];
        out[b.offset..b.offset + width].copy_from_slice(&ws.delta[..width]);
        seg -= 1;
        let wseg = &layout[seg];
        let fan_in = layer.dense.weight.ncols();
        let input = &ws.inputs[l];
        for o in 0..width {
            let d = ws.delta[o];
            let dst = &mut out[wseg.offset + o * fan_in..wseg.offset + (o + 1) * fan_in];
            for (g, h) in dst.iter_mut().zip(input) {
                *g = d * h;
            }
        }
        if l > 0 {
            let wd = layer.dense.weight.as_slice().expect("standard layout");
            for j in 0..fan_in {
                let mut s = 0.0;
                for o in 0..width {
                    s += ws.delta[o] * wd[o * fan_in + j];
                }
                ws.delta_prev[j] = s;
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
    debug_assert_eq!(seg, 0);
    Ok(loss)
}

/// Gradient of the per-sample negative log-likelihood w.r.t. all trainable
/// parameters, evaluated with BN running statistics.
pub fn per_sample_grad(model: &ModelState, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let mut ws = GradWorkspace::new(model);
    let mut out = vec![0.0; model.param_count()];
    per_sample_grad_into(model, x, y, &mut ws, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::forward::{forward, Mode};
    use crate::nn::model::{init_model, ModelSpec};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss_at(model: &ModelState, x: &[f64], y: usize) -> f64 {
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap();
        let logits = super::super::forward::eval_logits(model, xm.view(), crate::par::Execution::Sequential).unwrap();
        super::super::forward::cross_entropy(logits.row(0).as_slice().unwrap(), y)
    }

    fn perturbed_bn(spec: &ModelSpec, seed: u64) -> ModelState {
        let mut m = init_model(spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for l in &mut m.hidden {
            if let Some(bn) = &mut l.bn {
                bn.running_mean.mapv_inplace(|_| rng.random_range(-0.5..0.5));
                bn.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
                bn.scale.mapv_inplace(|_| rng.random_range(0.5..1.5));
                bn.shift.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            }
        }
        m
    }

    #[test]
    fn last_layer_closed_form() {
        let spec = ModelSpec::new(4, vec![6, 5], 3);
        let m = perturbed_bn(&spec, 4);
        let x = [0.3, -1.1, 0.8, 2.0];
        let y = 2;
        let g = per_sample_grad(&m, &x, y).unwrap();

        // closed form: (softmax(z) - onehot(y)) ⊗ h_last
        let xm = Array2::from_shape_vec((1, 4), x.to_vec()).unwrap();
        let p = forward(&m, xm.view(), Mode::Eval).unwrap();
        let mut h = x.to_vec();
        for l in &m.hidden {
            let bn = l.bn.as_ref().unwrap();
            h = (0..l.dense.weight.nrows())
                .map(|o| {
                    let z: f64 = l.dense.bias[o] + (0..h.len()).map(|j| l.dense.weight[[o, j]] * h[j]).sum::<f64>();
                    let xh = (z - bn.running_mean[o]) / (bn.running_var[o] + 1e-5).sqrt();
                    (bn.scale[o] * xh + bn.shift[o]).max(0.0)
                })
                .collect();
        }
        let seg = spec.layout().into_iter().find(|s| s.name == "output.weight").unwrap();
        for k in 0..3 {
            let d = p[[0, k]] - if k == y { 1.0 } else { 0.0 };
            for j in 0..h.len() {
                let got = g[seg.offset + k * h.len() + j];
                assert!((got - d * h[j]).abs() < 1e-12, "k={k} j={j}");
            }
        }
    }

    #[test]
    fn matches_finite_differences() {
        let spec = ModelSpec::new(3, vec![5, 4], 3);
        let m = perturbed_bn(&spec, 8);
        let x = [0.7, -0.2, 1.3];
        let g = per_sample_grad(&m, &x, 1).unwrap();
        let theta = m.parameters();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fd = (loss_at(&m.with_parameters(&tp).unwrap(), &x, 1)
                - loss_at(&m.with_parameters(&tm).unwrap(), &x, 1))
                / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(err < 1e-5, "coord {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn saturated_prediction_has_vanishing_gradient() {
        let spec = ModelSpec::new(3, vec![4], 3);
        let mut m = init_model(&spec, 2).unwrap();
        m.output.weight.fill(0.0);
        m.output.bias = ndarray::array![0.0, 60.0, 0.0];
        let g = per_sample_grad(&m, &[0.1, 0.2, 0.3], 1).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "norm {norm}");
    }

    #[test]
    fn rejects_bad_label() {
        let m = init_model(&ModelSpec::new(2, vec![2], 3), 0).unwrap();
        assert!(matches!(
            per_sample_grad(&m, &[0.0, 0.0], 3),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }
}
