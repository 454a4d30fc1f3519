//! Feedforward ReLU classifier: forward pass, softmax cross-entropy with
//! exact backpropagation (including input gradients), inverted dropout, and
//! mini-batch SGD training.
//!
//! The architecture is a chain of dense layers `[d, h_1, ..., h_m, classes]`
//! with ReLU after every hidden layer and softmax on the logits. Dropout
//! (inverted, applied after each hidden activation) is active only during
//! training; evaluation and attacks always see the deterministic network.
//!
//! All randomness flows through explicitly seeded ChaCha streams so training
//! is bit-reproducible: stream 0 drives shuffling and dropout, stream 1
//! drives per-epoch selection of adversarially perturbed samples. Keeping
//! the streams separate means a vanishing perturbation budget reproduces
//! clean training exactly.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{axpy, Matrix, Vector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub type SeededRng = ChaCha8Rng;

/// RNG stream carrying shuffling and dropout draws.
pub const STREAM_TRAIN: u64 = 0;
/// RNG stream carrying the per-epoch perturbed-subset draws.
pub const STREAM_PERTURB: u64 = 1;

pub fn seeded_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dense feedforward ReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    /// `weights[i]` has shape `layer_dims[i+1] x layer_dims[i]`.
    weights: Vec<Matrix>,
    biases: Vec<Vector>,
    dropout_rate: f64,
}

impl MlpModel {
    /// He-uniform initialization (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`),
    /// zero biases.
    pub fn new(layer_dims: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::DimensionMismatch(
                "network needs at least an input and an output layer".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::DimensionMismatch("zero-width layer".into()));
        }
        if layer_dims[layer_dims.len() - 1] < 2 {
            return Err(Error::DimensionMismatch("output layer needs at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Domain(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        let mut rng = seeded_stream(seed, STREAM_TRAIN);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..limit)));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpModel { layer_dims: layer_dims.to_vec(), weights, biases, dropout_rate })
    }

    /// Build directly from parameters (deserialization, tests).
    pub fn from_parameters(
        layer_dims: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vector>,
        dropout_rate: f64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || weights.len() != layer_dims.len() - 1 || biases.len() != weights.len() {
            return Err(Error::DimensionMismatch("inconsistent layer structure".into()));
        }
        for (i, w) in weights.iter().enumerate() {
            if w.rows() != layer_dims[i + 1] || w.cols() != layer_dims[i] {
                return Err(Error::DimensionMismatch(format!(
                    "weight {i} is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    layer_dims[i + 1],
                    layer_dims[i]
                )));
            }
            if !w.all_finite() {
                return Err(Error::Domain(format!("non-finite weight in layer {i}")));
            }
            if biases[i].len() != layer_dims[i + 1] {
                return Err(Error::DimensionMismatch(format!("bias {i} length mismatch")));
            }
            if biases[i].iter().any(|b| !b.is_finite()) {
                return Err(Error::Domain(format!("non-finite bias in layer {i}")));
            }
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Domain(format!("dropout rate must lie in [0, 1), got {dropout_rate}")));
        }
        Ok(MlpModel { layer_dims, weights, biases, dropout_rate })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vector] {
        &self.biases
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// The same network with dropout stripped. Inverted dropout already
    /// rescales at training time, so the evaluation function is unchanged;
    /// this only clears the rate for consumers that insist on it
    /// (certification refuses models that still carry dropout).
    pub fn without_dropout(&self) -> MlpModel {
        let mut m = self.clone();
        m.dropout_rate = 0.0;
        m
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} coordinates, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass with optional dropout. Returns pre-activations per
    /// layer, post-activation (and post-dropout) hidden outputs, and the
    /// realized dropout scale factors (empty in eval mode).
    fn forward_trace(&self, x: &[f64], mut dropout_rng: Option<&mut SeededRng>) -> ForwardTrace {
        let n_layers = self.weights.len();
        let mut activations: Vec<Vector> = vec![x.to_vec()];
        let mut pre_activations: Vec<Vector> = Vec::with_capacity(n_layers);
        let mut dropout_scales: Vec<Vector> = Vec::new();
        for i in 0..n_layers {
            let mut z = self.weights[i].matvec(activations.last().unwrap());
            axpy(&mut z, 1.0, &self.biases[i]);
            pre_activations.push(z.clone());
            if i + 1 < n_layers {
                let mut h: Vector = z.iter().map(|&v| v.max(0.0)).collect();
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    if self.dropout_rate > 0.0 {
                        let keep = 1.0 - self.dropout_rate;
                        let scales: Vector = h
                            .iter()
                            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        for (hv, s) in h.iter_mut().zip(&scales) {
                            *hv *= s;
                        }
                        dropout_scales.push(scales);
                    }
                }
                activations.push(h);
            }
        }
        ForwardTrace { pre_activations, activations, dropout_scales }
    }

    /// Logits and softmax probabilities in evaluation mode.
    pub fn forward(&self, x: &[f64]) -> Result<(Vector, Vector)> {
        self.check_input(x)?;
        let trace = self.forward_trace(x, None);
        let logits = trace.pre_activations.last().unwrap().clone();
        let probs = softmax(&logits);
        Ok((logits, probs))
    }

    /// Logits only (the certification modules work on pre-softmax scores).
    pub fn logits(&self, x: &[f64]) -> Result<Vector> {
        Ok(self.forward(x)?.0)
    }

    /// Arg-max class; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let (logits, _) = self.forward(x)?;
        Ok(argmax(&logits))
    }

    /// Cross-entropy loss in evaluation mode.
    pub fn loss(&self, x: &[f64], y: usize) -> Result<f64> {
        self.check_input(x)?;
        self.check_label(y)?;
        let (logits, _) = self.forward(x)?;
        Ok(cross_entropy(&logits, y))
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "label {y} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Loss plus exact gradients with respect to every parameter and the
    /// input. With `dropout_rng` supplied the realized dropout mask is part
    /// of the differentiated function, so gradients stay exact for the
    /// sampled subnetwork.
    pub fn loss_and_grads(
        &self,
        x: &[f64],
        y: usize,
        dropout_rng: Option<&mut SeededRng>,
    ) -> Result<LossGrads> {
        self.check_input(x)?;
        self.check_label(y)?;
        let n_layers = self.weights.len();
        let trace = self.forward_trace(x, dropout_rng);
        let logits = trace.pre_activations.last().unwrap();
        let probs = softmax(logits);
        let loss = cross_entropy(logits, y);

        // dL/dlogits = p - onehot(y).
        let mut delta: Vector = probs.clone();
        delta[y] -= 1.0;

        let mut weight_grads: Vec<Matrix> = Vec::with_capacity(n_layers);
        let mut bias_grads: Vec<Vector> = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            weight_grads.push(Matrix::zeros(0, 0));
            bias_grads.push(Vector::new());
        }
        let mut input_grad: Vector = Vec::new();
        for i in (0..n_layers).rev() {
            let upstream = &trace.activations[i];
            weight_grads[i] =
                Matrix::from_fn(self.weights[i].rows(), self.weights[i].cols(), |r, c| {
                    delta[r] * upstream[c]
                });
            bias_grads[i] = delta.clone();
            let mut down = self.weights[i].tr_matvec(&delta);
            if i > 0 {
                // Through dropout (if it was realized) then ReLU.
                if !trace.dropout_scales.is_empty() {
                    for (dv, s) in down.iter_mut().zip(&trace.dropout_scales[i - 1]) {
                        *dv *= s;
                    }
                }
                for (dv, &z) in down.iter_mut().zip(&trace.pre_activations[i - 1]) {
                    if z <= 0.0 {
                        *dv = 0.0;
                    }
                }
                delta = down;
            } else {
                input_grad = down;
            }
        }
        Ok(LossGrads { loss, weight_grads, bias_grads, input_grad })
    }

    /// Gradient of the loss with respect to the input only (eval mode).
    pub fn input_gradient(&self, x: &[f64], y: usize) -> Result<Vector> {
        Ok(self.loss_and_grads(x, y, None)?.input_grad)
    }

    /// Fraction of samples whose arg-max prediction matches the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        for i in 0..data.n_samples() {
            if self.predict(data.row(i))? == data.label(i) {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.n_samples() as f64)
    }
}

struct ForwardTrace {
    pre_activations: Vec<Vector>,
    activations: Vec<Vector>,
    dropout_scales: Vec<Vector>,
}

pub struct LossGrads {
    pub loss: f64,
    pub weight_grads: Vec<Matrix>,
    pub bias_grads: Vec<Vector>,
    pub input_grad: Vector,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vector {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vector = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Cross-entropy `-log p_y` via log-sum-exp.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln() + m;
    lse - logits[y]
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch SGD hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Dropout active during training (the rate lives on the model).
    pub dropout_enabled: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            dropout_enabled: true,
            seed: 0,
        }
    }
}

pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training loss per epoch.
    pub epoch_losses: Vector,
}

/// Shared SGD loop. `perturb` may return a replacement input for a sample
/// (adversarial training plugs PGD in here); it sees the current model
/// immutably before each batch update. The hook draws no randomness from
/// the shuffle/dropout stream, so `perturb` returning `None` everywhere is
/// bitwise identical to clean training.
pub(crate) fn sgd_loop(
    mut model: MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut perturb: impl FnMut(&MlpModel, usize, usize) -> Result<Option<Vector>>,
) -> Result<TrainOutcome> {
    if data.n_features() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} features, model expects {}",
            data.n_features(),
            model.input_dim()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Domain("batch size must be positive".into()));
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::Domain(format!("learning rate must be positive, got {}", cfg.learning_rate)));
    }
    let mut rng = seeded_stream(cfg.seed, STREAM_TRAIN);
    let n = data.n_samples();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vector::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Perturbations are computed against the pre-update model.
            let mut inputs: Vec<Vector> = Vec::with_capacity(batch.len());
            for &idx in batch {
                let x = match perturb(&model, epoch, idx)? {
                    Some(replaced) => replaced,
                    None => data.row(idx).to_vec(),
                };
                inputs.push(x);
            }
            let mut w_acc: Vec<Matrix> = model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect();
            let mut b_acc: Vec<Vector> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();
            for (&idx, x) in batch.iter().zip(&inputs) {
                let dropout_rng = if cfg.dropout_enabled && model.dropout_rate > 0.0 {
                    Some(&mut rng)
                } else {
                    None
                };
                let grads = model.loss_and_grads(x, data.label(idx), dropout_rng)?;
                epoch_loss += grads.loss;
                for (acc, g) in w_acc.iter_mut().zip(&grads.weight_grads) {
                    *acc = acc.add(g);
                }
                for (acc, g) in b_acc.iter_mut().zip(&grads.bias_grads) {
                    axpy(acc, 1.0, g);
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&w_acc) {
                *w = w.sub(&g.scale(scale));
            }
            for (b, g) in model.biases.iter_mut().zip(&b_acc) {
                axpy(b, -scale, g);
            }
        }
        epoch_losses.push(epoch_loss / n as f64);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

/// Standard (non-adversarial) mini-batch SGD training.
pub fn train_clean(model: MlpModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    sgd_loop(model, data, cfg, |_, _, _| Ok(None))
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model document: architecture, parameters, and the
/// standardization statistics the training data was transformed with.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    layer_dims: Vec<usize>,
    dropout_rate: f64,
    /// Row-major weight matrices, one per layer.
    weights: Vec<Vec<Vector>>,
    biases: Vec<Vector>,
    standardization: Option<crate::data::StandardizationStats>,
}

pub fn model_to_json(
    model: &MlpModel,
    stats: Option<&crate::data::StandardizationStats>,
) -> String {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        layer_dims: model.layer_dims.clone(),
        dropout_rate: model.dropout_rate,
        weights: model
            .weights
            .iter()
            .map(|w| (0..w.rows()).map(|i| w.row(i).to_vec()).collect())
            .collect(),
        biases: model.biases.clone(),
        standardization: stats.cloned(),
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}

pub fn model_from_json(
    json: &str,
) -> Result<(MlpModel, Option<crate::data::StandardizationStats>)> {
    let file: ModelFile =
        serde_json::from_str(json).map_err(|e| Error::Serialization(format!("model file: {e}")))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let weights: Vec<Matrix> =
        file.weights.into_iter().map(Matrix::from_rows).collect::<Result<_>>()?;
    let model = MlpModel::from_parameters(file.layer_dims, weights, file.biases, file.dropout_rate)?;
    Ok((model, file.standardization))
}

pub fn save_model(
    model: &MlpModel,
    stats: Option<&crate::data::StandardizationStats>,
    path: impl AsRef<Path>,
) -> Result<()> {
    crate::manifest::write_atomic(path.as_ref(), model_to_json(model, stats).as_bytes())
}

pub fn load_model(
    path: impl AsRef<Path>,
) -> Result<(MlpModel, Option<crate::data::StandardizationStats>)> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    model_from_json(&text)
}
