//! Small classifiers with multi-sample dropout forward passes.
//!
//! Two reference architectures: an MLP (dense + ReLU stack) and a small
//! strided CNN (two conv layers + two dense layers). Both designate the
//! activation feeding the final dense layer as the *last feature layer*;
//! inverted dropout is applied there, and `forward_multisample` draws K
//! independent masks on it while sharing one feature computation, producing
//! the K sub-network outputs the MDL objective consumes.
//!
//! Evaluation mode applies no dropout at all, so eval forwards are
//! deterministic. A `global_dropout` flag additionally drops every hidden
//! activation (the plain-dropout baseline's configuration knob).

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ConvDims, Tensor};

/// Forward-pass mode: deterministic evaluation, or training with the
/// generator that draws dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv { height: usize, width: usize, channels: usize, filters: usize, kernel: usize, stride: usize },
}

/// One parameterized layer. Weights are `[fan_in × fan_out]` tensors so both
/// kinds reduce to a matrix product.
#[derive(Debug, Clone)]
struct Layer {
    spec: LayerSpec,
    w: Tensor,
    b: Tensor,
}

impl Layer {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self.spec {
            LayerSpec::Dense { .. } => x.matmul(&self.w)?.add_row(&self.b),
            LayerSpec::Conv { height, width, channels, filters, kernel, stride } => {
                let batch = x.shape()[0];
                let dims = ConvDims::new(batch, height, width, channels, kernel, stride)?;
                let patches = x.im2col_hwc(dims)?;
                let out = patches.matmul(&self.w)?.add_row(&self.b)?;
                out.reshape(&[batch, dims.out_h * dims.out_w * filters])
            }
        }
    }
}

/// A feed-forward classifier: feature layers with ReLU, dropout on the last
/// feature activation, and a dense head producing `classes` logits.
pub struct Classifier {
    layers: Vec<Layer>,
    dropout_rate: f64,
    global_dropout: bool,
    classes: usize,
    input_dim: usize,
}

/// He-uniform initialization for a ReLU layer.
fn he_uniform(fan_in: usize, count: usize, rng: &mut Rng) -> Vec<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..count).map(|_| rng.random_range(-limit..limit)).collect()
}

impl Classifier {
    fn from_specs(
        specs: Vec<LayerSpec>,
        input_dim: usize,
        classes: usize,
        dropout_rate: f64,
        global_dropout: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Param(format!("dropout rate {dropout_rate} outside [0,1)")));
        }
        if classes < 2 {
            return Err(Error::Param(format!("need at least 2 classes, got {classes}")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let (fan_in, fan_out) = match spec {
                LayerSpec::Dense { input, output } => (input, output),
                LayerSpec::Conv { channels, kernel, filters, .. } => (kernel * kernel * channels, filters),
            };
            let w = Tensor::leaf(&[fan_in, fan_out], he_uniform(fan_in, fan_in * fan_out, rng))?;
            let b = Tensor::leaf(&[fan_out], vec![0.0; fan_out])?;
            layers.push(Layer { spec, w, b });
        }
        Ok(Self { layers, dropout_rate, global_dropout, classes, input_dim })
    }

    /// MLP `input -> hidden... -> classes` with ReLU between layers and
    /// dropout on the last hidden activation.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        dropout_rate: f64,
        global_dropout: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Param("mlp needs at least one hidden layer".into()));
        }
        let mut specs = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            specs.push(LayerSpec::Dense { input: prev, output: h });
            prev = h;
        }
        specs.push(LayerSpec::Dense { input: prev, output: classes });
        Self::from_specs(specs, input_dim, classes, dropout_rate, global_dropout, rng)
    }

    /// Small CNN for square single-channel inputs: two strided conv layers,
    /// a dense feature layer and the classifier head.
    pub fn small_cnn(
        side: usize,
        classes: usize,
        filters: (usize, usize),
        kernel: usize,
        stride: usize,
        feature_dim: usize,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d1 = ConvDims::new(1, side, side, 1, kernel, stride)?;
        let d2 = ConvDims::new(1, d1.out_h, d1.out_w, filters.0, kernel, stride)?;
        let specs = vec![
            LayerSpec::Conv { height: side, width: side, channels: 1, filters: filters.0, kernel, stride },
            LayerSpec::Conv {
                height: d1.out_h,
                width: d1.out_w,
                channels: filters.0,
                filters: filters.1,
                kernel,
                stride,
            },
            LayerSpec::Dense { input: d2.out_h * d2.out_w * filters.1, output: feature_dim },
            LayerSpec::Dense { input: feature_dim, output: classes },
        ];
        Self::from_specs(specs, side * side, classes, dropout_rate, false, rng)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        match x.shape() {
            [b, d] if *d == self.input_dim => Ok(*b),
            s => Err(Error::Shape(format!(
                "input shape {s:?} does not match model input dim {}",
                self.input_dim
            ))),
        }
    }

    fn maybe_dropout(&self, h: Tensor, mode: &mut Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => Ok(h),
            Mode::Train(rng) => {
                if self.dropout_rate == 0.0 {
                    Ok(h)
                } else {
                    Ok(h.dropout(self.dropout_rate, rng)?.0)
                }
            }
        }
    }

    /// The last feature activation (everything up to, but excluding, the
    /// dropout on the feature layer and the head).
    pub fn features(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            h = layer.apply(&h)?.relu();
            if self.global_dropout {
                h = self.maybe_dropout(h, mode)?;
            }
        }
        Ok(h)
    }

    /// The classifier head: logits from (possibly dropped-out) features.
    pub fn head(&self, features: &Tensor) -> Result<Tensor> {
        self.layers.last().expect("non-empty").apply(features)
    }

    /// Logits `[B×C]`. Train mode draws one dropout mask on the last feature
    /// layer (plus earlier layers under `global_dropout`).
    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let features = self.features(x, mode)?;
        // under global dropout the feature layer was already dropped in-loop
        let features = if self.global_dropout {
            features
        } else {
            self.maybe_dropout(features, mode)?
        };
        self.head(&features)
    }

    /// Softmax probabilities of an evaluation-mode forward.
    pub fn predict_probs(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, &mut Mode::Eval)?.softmax_rows()
    }

    /// Multi-sample dropout: shares one feature computation, draws `k`
    /// independent masks on the last feature layer, and runs the head `k`
    /// times. Returns the K probability tensors, each `[B×C]`.
    pub fn forward_multisample(&self, x: &Tensor, k: usize, rng: &mut Rng) -> Result<Vec<Tensor>> {
        if k < 1 {
            return Err(Error::Param(format!("multisample needs K >= 1, got {k}")));
        }
        let mut mode = Mode::Train(rng);
        let features = self.features(x, &mut mode)?;
        let Mode::Train(rng) = mode else { unreachable!() };
        let mut outs = Vec::with_capacity(k);
        for _ in 0..k {
            let dropped = if self.dropout_rate == 0.0 {
                features.clone()
            } else {
                features.dropout(self.dropout_rate, rng)?.0
            };
            outs.push(self.head(&dropped)?.softmax_rows()?);
        }
        Ok(outs)
    }

    /// All parameter tensors, layer by layer (weight then bias).
    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.clone(), l.b.clone()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    /// Replaces parameter values with freshly built leaves (tensors are
    /// immutable; an update step produces new ones). Order must match
    /// [`Classifier::parameters`].
    pub fn set_parameter_values(&mut self, values: Vec<Vec<f64>>) -> Result<()> {
        if values.len() != self.layers.len() * 2 {
            return Err(Error::Shape(format!(
                "expected {} parameter vectors, got {}",
                self.layers.len() * 2,
                values.len()
            )));
        }
        let mut it = values.into_iter();
        for layer in &mut self.layers {
            let w = it.next().expect("checked");
            let b = it.next().expect("checked");
            if w.len() != layer.w.numel() || b.len() != layer.b.numel() {
                return Err(Error::Shape("parameter vector length mismatch".into()));
            }
            layer.w = Tensor::leaf(layer.w.shape(), w)?;
            layer.b = Tensor::leaf(layer.b.shape(), b)?;
        }
        Ok(())
    }

    /// Clears accumulated parameter gradients.
    pub fn zero_grad(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }

    /// Toggles gradient tracking on all parameters; attacks freeze them so
    /// backward only reaches the input.
    pub fn set_params_requires_grad(&self, on: bool) {
        for p in self.parameters() {
            p.set_requires_grad(on);
        }
    }

    // ---- checkpoint persistence ------------------------------------------

    /// Serializes the model as versioned JSON. 64-bit weights survive the
    /// round trip exactly (shortest-representation float printing).
    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = CheckpointDoc {
            version: CHECKPOINT_VERSION,
            classes: self.classes,
            input_dim: self.input_dim,
            dropout_rate: self.dropout_rate,
            global_dropout: self.global_dropout,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    spec: l.spec.clone(),
                    w: l.w.values().to_vec(),
                    b: l.b.values().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&doc)
            .map_err(|e| Error::Config(format!("checkpoint serialization: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path)?;
        let doc: CheckpointDoc = serde_json::from_str(&json)
            .map_err(|e| Error::Config(format!("checkpoint parse: {e}")))?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                doc.version
            )));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        for l in doc.layers {
            let (fan_in, fan_out) = match l.spec {
                LayerSpec::Dense { input, output } => (input, output),
                LayerSpec::Conv { channels, kernel, filters, .. } => (kernel * kernel * channels, filters),
            };
            if l.w.len() != fan_in * fan_out || l.b.len() != fan_out {
                return Err(Error::Config("checkpoint weight lengths inconsistent".into()));
            }
            layers.push(Layer {
                spec: l.spec,
                w: Tensor::leaf(&[fan_in, fan_out], l.w)?,
                b: Tensor::leaf(&[fan_out], l.b)?,
            });
        }
        if layers.is_empty() {
            return Err(Error::Config("checkpoint has no layers".into()));
        }
        Ok(Self {
            layers,
            dropout_rate: doc.dropout_rate,
            global_dropout: doc.global_dropout,
            classes: doc.classes,
            input_dim: doc.input_dim,
        })
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    classes: usize,
    input_dim: usize,
    dropout_rate: f64,
    global_dropout: bool,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    spec: LayerSpec,
    w: Vec<f64>,
    b: Vec<f64>,
}
