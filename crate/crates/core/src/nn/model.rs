use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{sha256_hex, TextDoc};

pub const CHECKPOINT_TAG: &str = "dampen-ckpt-v1";

/// Architecture of a fully-connected classifier.
///
/// Every hidden layer is `Linear -> BatchNorm (optional) -> ReLU`; the output
/// layer is a plain `Linear` followed by softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub num_classes: usize,
    pub batch_norm: bool,
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, num_classes: usize) -> Self {
        ModelSpec {
            input_dim,
            hidden_layers,
            num_classes,
            batch_norm: true,
        }
    }

    /// Parses a size tag such as `3x100` (three layers of 100) or `64-32`.
    pub fn from_tag(tag: &str, input_dim: usize, num_classes: usize) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("bad model size tag {tag:?}"));
        let hidden = if let Some((depth, width)) = tag.split_once('x') {
            let depth: usize = depth.trim().parse().map_err(|_| bad())?;
            let width: usize = width.trim().parse().map_err(|_| bad())?;
            vec![width; depth]
        } else {
            tag.split('-')
                .map(|w| w.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?
        };
        let spec = ModelSpec::new(input_dim, hidden, num_classes);
        spec.validate()?;
        Ok(spec)
    }

    pub fn tag(&self) -> String {
        match self.hidden_layers.first() {
            Some(&w) if self.hidden_layers.iter().all(|&h| h == w) => {
                format!("{}x{}", self.hidden_layers.len(), w)
            }
            _ => self
                .hidden_layers
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join("-"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.hidden_layers.is_empty() {
            return Err(Error::InvalidSpec("at least one hidden layer is required".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::InvalidSpec("hidden widths must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("num_classes must be >= 2".into()));
        }
        Ok(())
    }

    /// Number of trainable parameters `m`.
    pub fn param_count(&self) -> usize {
        self.layout().last().map_or(0, |s| s.offset + s.len)
    }

    /// Flattening order: for each hidden layer its weight (row-major,
    /// `out x in`), bias, then BN scale and shift; finally the output weight
    /// and bias.
    pub fn layout(&self) -> Vec<ParamSegment> {
        let mut segs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, kind, len| {
            segs.push(ParamSegment {
                name,
                kind,
                offset,
                len,
            });
            offset += len;
        };
        let mut fan_in = self.input_dim;
        for (i, &w) in self.hidden_layers.iter().enumerate() {
            push(format!("layer{i}.weight"), ParamKind::Weight, w * fan_in);
            push(format!("layer{i}.bias"), ParamKind::Bias, w);
            if self.batch_norm {
                push(format!("layer{i}.bn_scale"), ParamKind::BnScale, w);
                push(format!("layer{i}.bn_shift"), ParamKind::BnShift, w);
            }
            fan_in = w;
        }
        push("output.weight".into(), ParamKind::Weight, self.num_classes * fan_in);
        push("output.bias".into(), ParamKind::Bias, self.num_classes);
        segs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSegment {
    pub name: String,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    fn identity(width: usize) -> Self {
        BatchNorm {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub bn: Option<BatchNorm>,
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub seed: u64,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.random_range(-bound..bound))
}

/// Seeded He-uniform initialization: weights ~ U(±sqrt(6/fan_in)), biases
/// ~ U(±1/sqrt(fan_in)), BN at identity.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ModelState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = |rng: &mut ChaCha8Rng, out: usize, fan_in: usize| {
        let w_bound = (6.0 / fan_in as f64).sqrt();
        let b_bound = 1.0 / (fan_in as f64).sqrt();
        Dense {
            weight: uniform_matrix(rng, out, fan_in, w_bound),
            bias: uniform_vector(rng, out, b_bound),
        }
    };
    let mut fan_in = spec.input_dim;
    let mut hidden = Vec::with_capacity(spec.hidden_layers.len());
    for &w in &spec.hidden_layers {
        hidden.push(HiddenLayer {
            dense: dense(&mut rng, w, fan_in),
            bn: spec.batch_norm.then(|| BatchNorm::identity(w)),
        });
        fan_in = w;
    }
    let output = dense(&mut rng, spec.num_classes, fan_in);
    Ok(ModelState {
        spec: spec.clone(),
        seed,
        hidden,
        output,
    })
}

impl ModelState {
    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Trainable slices in layout order.
    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.hidden {
            out.push(layer.dense.weight.as_slice().expect("standard layout"));
            out.push(layer.dense.bias.as_slice().expect("standard layout"));
            if let Some(bn) = &layer.bn {
                out.push(bn.scale.as_slice().expect("standard layout"));
                out.push(bn.shift.as_slice().expect("standard layout"));
            }
        }
        out.push(self.output.weight.as_slice().expect("standard layout"));
        out.push(self.output.bias.as_slice().expect("standard layout"));
        out
    }

    pub(crate) fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.hidden {
            out.push(layer.dense.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.dense.bias.as_slice_mut().expect("standard layout"));
            if let Some(bn) = &mut layer.bn {
                out.push(bn.scale.as_slice_mut().expect("standard layout"));
                out.push(bn.shift.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }

    /// Flattened parameter vector θ.
    pub fn parameters(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for s in self.slices() {
            v.extend_from_slice(s);
        }
        v
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        let m = self.param_count();
        if theta.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: theta.len(),
                context: "parameter vector",
            });
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&theta[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn with_parameters(&self, theta: &[f64]) -> Result<ModelState> {
        let mut out = self.clone();
        out.set_parameters(theta)?;
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self.hidden.iter().filter_map(|l| l.bn.as_ref()).all(|bn| {
                bn.running_mean.iter().all(|v| v.is_finite())
                    && bn.running_var.iter().all(|v| v.is_finite() && *v > 0.0)
            })
    }

    pub fn to_doc(&self) -> TextDoc {
        let mut doc = TextDoc::new(CHECKPOINT_TAG);
        let hidden: Vec<String> = self.spec.hidden_layers.iter().map(|h| h.to_string()).collect();
        doc.field("input_dim", self.spec.input_dim)
            .field("hidden_layers", hidden.join(" "))
            .field("num_classes", self.spec.num_classes)
            .field("batch_norm", self.spec.batch_norm)
            .field("seed", self.seed);
        for (i, layer) in self.hidden.iter().enumerate() {
            doc.array(&format!("layer{i}.weight"), layer.dense.weight.as_slice().unwrap());
            doc.array(&format!("layer{i}.bias"), layer.dense.bias.as_slice().unwrap());
            if let Some(bn) = &layer.bn {
                doc.array(&format!("layer{i}.bn_scale"), bn.scale.as_slice().unwrap());
                doc.array(&format!("layer{i}.bn_shift"), bn.shift.as_slice().unwrap());
                doc.array(
                    &format!("layer{i}.bn_running_mean"),
                    bn.running_mean.as_slice().unwrap(),
                );
                doc.array(&format!("layer{i}.bn_running_var"), bn.running_var.as_slice().unwrap());
            }
        }
        doc.array("output.weight", self.output.weight.as_slice().unwrap());
        doc.array("output.bias", self.output.bias.as_slice().unwrap());
        doc
    }

    pub fn from_doc(doc: &TextDoc, path: &Path) -> Result<ModelState> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        let field = |k: &str| doc.get(k).ok_or_else(|| corrupt(format!("missing field {k}")));
        let parse_usize = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|_| corrupt(format!("field {k} is not an integer")))
        };
        let hidden_layers = field("hidden_layers")?
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(|_| corrupt("bad hidden_layers".into())))
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            input_dim: parse_usize("input_dim")?,
            hidden_layers,
            num_classes: parse_usize("num_classes")?,
            batch_norm: field("batch_norm")?
                .parse()
                .map_err(|_| corrupt("bad batch_norm".into()))?,
        };
        spec.validate()?;
        let seed: u64 = field("seed")?.parse().map_err(|_| corrupt("bad seed".into()))?;
        let mut model = init_model(&spec, seed)?;
        let load = |name: &str, dst: &mut [f64]| -> Result<()> {
            let src = doc
                .get_array(name)
                .ok_or_else(|| corrupt(format!("missing array {name}")))?;
            if src.len() != dst.len() {
                return Err(corrupt(format!(
                    "array {name} has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src);
            Ok(())
        };
        for (i, layer) in model.hidden.iter_mut().enumerate() {
            load(&format!("layer{i}.weight"), layer.dense.weight.as_slice_mut().unwrap())?;
            load(&format!("layer{i}.bias"), layer.dense.bias.as_slice_mut().unwrap())?;
            if let Some(bn) = &mut layer.bn {
                load(&format!("layer{i}.bn_scale"), bn.scale.as_slice_mut().unwrap())?;
                load(&format!("layer{i}.bn_shift"), bn.shift.as_slice_mut().unwrap())?;
                load(
                    &format!("layer{i}.bn_running_mean"),
                    bn.running_mean.as_slice_mut().unwrap(),
                )?;
                load(
                    &format!("layer{i}.bn_running_var"),
                    bn.running_var.as_slice_mut().unwrap(),
                )?;
            }
        }
        load("output.weight", model.output.weight.as_slice_mut().unwrap())?;
        load("output.bias", model.output.bias.as_slice_mut().unwrap())?;
        if !model.is_finite() {
            return Err(corrupt("non-finite values or non-positive running variance".into()));
        }
        Ok(model)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        sha256_hex(&self.to_doc().render())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_doc().write_to(path)
    }

    pub fn load(path: &Path) -> Result<ModelState> {
        let doc = TextDoc::read_from(path, CHECKPOINT_TAG)?;
        Self::from_doc(&doc, path)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -> [{}] -> {}{}",
            self.input_dim,
            self.tag(),
            self.num_classes,
            if self.batch_norm { " (bn)" } else { "" }
        )
    }
}
