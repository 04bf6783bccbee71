//! Base classification model: a dense ReLU stack with a softmax head,
//! trained by Adam on cross-entropy.
//!
//! The model is deliberately small and fully deterministic: initialization,
//! shuffling, and updates are pure functions of the seeds, and trained models
//! are immutable afterward. Class labels are 1-based throughout (`1..=K`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use rand_distr::{Distribution, StandardNormal};

/// Smallest probability fed to `ln` in the loss.
const PROB_FLOOR: f64 = 1e-12;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
}

/// Architecture of the classifier: input width, hidden widths, class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        if hidden_dims.is_empty() {
            return Err(Error::InvalidConfig("hidden_dims must be non-empty".into()));
        }
        if hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("hidden dims must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be >= 2".into()));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::ReLU,
        })
    }

    /// (in, out) sizes of every affine layer, input through the class head.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.num_classes));
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }
}

/// One affine layer. Weights are row-major with shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights then biases, as one contiguous vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.weights);
        v.extend_from_slice(&self.bias);
        v
    }

    fn affine(&self, input: &[f64], output: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        debug_assert_eq!(output.len(), self.out_dim);
        for (o, out) in output.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut sum = self.bias[o];
            for (w, x) in row.iter().zip(input) {
                sum += w * x;
            }
            *out = sum;
        }
    }
}

/// All layer parameters of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .layer_dims()
                .into_iter()
                .map(|(i, o)| LayerParams::zeros(i, o))
                .collect(),
        }
    }

    pub fn conforms_to(&self, spec: &NetworkSpec) -> bool {
        let dims = spec.layer_dims();
        self.layers.len() == dims.len()
            && self.layers.iter().zip(&dims).all(|(l, &(i, o))| {
                l.in_dim == i
                    && l.out_dim == o
                    && l.weights.len() == i * o
                    && l.bias.len() == o
                    && l.weights.iter().chain(&l.bias).all(|v| v.is_finite())
            })
    }

    /// Euclidean norm over every parameter.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Result<Self> {
        if epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            epochs,
            batch_size,
            learning_rate,
            seed,
        })
    }
}

/// A classifier: architecture plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    spec: NetworkSpec,
    params: NetworkParams,
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Activations of the last hidden layer (penultimate representation).
    pub embedding: Vec<f64>,
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Cross-entropy of a predicted distribution against a 1-based label.
/// The picked probability is clamped below by 1e-12, so the loss is finite.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label == 0 || label > probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: probs.len(),
        });
    }
    Ok(-probs[label - 1].max(PROB_FLOOR).ln())
}

impl ClassifierModel {
    pub fn new(spec: NetworkSpec, params: NetworkParams) -> Result<Self> {
        if !params.conforms_to(&spec) {
            return Err(Error::InvalidConfig(
                "params do not conform to network spec".into(),
            ));
        }
        Ok(Self { spec, params })
    }

    /// Fresh network: weights from N(0, 2/fan_in), biases zero.
    /// Bit-identical for identical (spec, seed).
    pub fn init(spec: NetworkSpec, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(in_dim, out_dim)| {
                let scale = (2.0 / in_dim as f64).sqrt();
                let weights = (0..in_dim * out_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * scale
                    })
                    .collect();
                LayerParams {
                    in_dim,
                    out_dim,
                    weights,
                    bias: vec![0.0; out_dim],
                }
            })
            .collect();
        Self {
            spec,
            params: NetworkParams { layers },
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    /// Forward pass with the model's own parameters.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        self.forward_with(&self.params, x)
    }

    /// Forward pass with substituted parameters of the same shape
    /// (used to evaluate perturbed ensemble members).
    pub fn forward_with(&self, params: &NetworkParams, x: &[f64]) -> Result<ForwardPass> {
        let trace = self.trace_with(params, x)?;
        Ok(trace.into_forward_pass())
    }

    /// Class prediction, 1-based; ties resolve to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let pass = self.forward(x)?;
        Ok(argmax_one_based(&pass.probs))
    }

    fn trace_with(&self, params: &NetworkParams, x: &[f64]) -> Result<Trace> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
                context: "forward input",
            });
        }
        debug_assert!(params.conforms_to(&self.spec));
        let num_layers = params.layers.len();
        // pre[l] = affine output of layer l; post[l] = activation applied
        // (identity on the final layer, which holds the logits).
        let mut pre = Vec::with_capacity(num_layers);
        let mut post = Vec::with_capacity(num_layers);
        let mut input = x.to_vec();
        for (l, layer) in params.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_dim];
            layer.affine(&input, &mut z);
            let a = if l + 1 == num_layers {
                z.clone()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            pre.push(z);
            post.push(a.clone());
            input = a;
        }
        Ok(Trace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Writes a versioned JSON checkpoint: spec, all parameter arrays in
    /// row-major order, and the seed used for training. Round-trips bit-exactly.
    pub fn save_checkpoint(&self, train_seed: u64, path: &std::path::Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params: self.params.clone(),
            train_seed,
        };
        let json = serde_json::to_string_pretty(&ckpt)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<(Self, u64)> {
        let json = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&json)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let model = Self::new(ckpt.spec, ckpt.params)?;
        Ok((model, ckpt.train_seed))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    spec: NetworkSpec,
    params: NetworkParams,
    train_seed: u64,
}

/// 1-based argmax with ties broken toward the lowest index.
pub fn argmax_one_based(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best + 1
}

struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    fn into_forward_pass(mut self) -> ForwardPass {
        let logits = self.post.pop().expect("network has at least two layers");
        let embedding = self
            .post
            .pop()
            .expect("network has at least one hidden layer");
        let probs = softmax(&logits);
        ForwardPass {
            logits,
            probs,
            embedding,
        }
    }
}

/// Gradient of the mean cross-entropy over a batch, with respect to every
/// parameter. Returned in the same shape as the network parameters.
pub fn gradients(model: &ClassifierModel, batch: &[(Vec<f64>, usize)]) -> Result<NetworkParams> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("gradient batch"));
    }
    let spec = model.spec();
    let mut grad = NetworkParams::zeros(spec);
    for (x, label) in batch {
        if *label == 0 || *label > spec.num_classes {
            return Err(Error::LabelOutOfRange {
                label: *label,
                num_classes: spec.num_classes,
            });
        }
        let trace = model.trace_with(model.params(), x)?;
        accumulate_sample_grad(model, &trace, *label, &mut grad);
    }
    let scale = 1.0 / batch.len() as f64;
    for layer in &mut grad.layers {
        for w in &mut layer.weights {
            *w *= scale;
        }
        for b in &mut layer.bias {
            *b *= scale;
        }
    }
    Ok(grad)
}

/// Backpropagation for one sample; adds into `grad`.
fn accumulate_sample_grad(
    model: &ClassifierModel,
    trace: &Trace,
    label: usize,
    grad: &mut NetworkParams,
) {
    let params = model.params();
    let num_layers = params.layers.len();
    let logits = &trace.post[num_layers - 1];
    let probs = softmax(logits);

    // d(loss)/d(logits) for softmax + cross-entropy.
    let mut delta: Vec<f64> = probs;
    delta[label - 1] -= 1.0;

    for l in (0..num_layers).rev() {
        let layer = &params.layers[l];
        let input = if l == 0 {
            &trace.input
        } else {
            &trace.post[l - 1]
        };
        let glayer = &mut grad.layers[l];
        for (o, &d) in delta.iter().enumerate() {
            glayer.bias[o] += d;
            let row = o * layer.in_dim;
            for (i, &xi) in input.iter().enumerate() {
                glayer.weights[row + i] += d * xi;
            }
        }
        if l > 0 {
            let mut prev = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                let row = o * layer.in_dim;
                for (i, p) in prev.iter_mut().enumerate() {
                    *p += layer.weights[row + i] * d;
                }
            }
            // ReLU gate on the previous layer's pre-activation.
            for (p, &z) in prev.iter_mut().zip(&trace.pre[l - 1]) {
                if z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

/// A trained model plus the per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    pub epoch_losses: Vec<f64>,
}

/// Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) over shuffled mini-batches.
/// Deterministic given `config.seed`; the input model is consumed.
pub fn train(
    model: ClassifierModel,
    dataset: &[(Vec<f64>, usize)],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset"));
    }
    let spec = model.spec().clone();
    for (x, label) in dataset {
        if *label == 0 || *label > spec.num_classes {
            return Err(Error::LabelOutOfRange {
                label: *label,
                num_classes: spec.num_classes,
            });
        }
        if x.len() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                got: x.len(),
                context: "training sample",
            });
        }
    }

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    let mut model = model;
    let mut m = NetworkParams::zeros(&spec);
    let mut v = NetworkParams::zeros(&spec);
    let mut step = 0u64;
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch: Vec<(Vec<f64>, usize)> = Vec::with_capacity(config.batch_size);

    for _ in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let grad = gradients(&model, &batch)?;

            step += 1;
            let bc1 = 1.0 - BETA1.powi(step as i32);
            let bc2 = 1.0 - BETA2.powi(step as i32);
            for (l, layer) in model.params.layers.iter_mut().enumerate() {
                let gl = &grad.layers[l];
                let ml = &mut m.layers[l];
                let vl = &mut v.layers[l];
                adam_update(
                    &mut layer.weights,
                    &gl.weights,
                    &mut ml.weights,
                    &mut vl.weights,
                    config.learning_rate,
                    BETA1,
                    BETA2,
                    EPS,
                    bc1,
                    bc2,
                );
                adam_update(
                    &mut layer.bias,
                    &gl.bias,
                    &mut ml.bias,
                    &mut vl.bias,
                    config.learning_rate,
                    BETA1,
                    BETA2,
                    EPS,
                    bc1,
                    bc2,
                );
            }
        }

        epoch_losses.push(mean_loss(&model, dataset)?);
    }

    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    params: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Mean cross-entropy of the model over a dataset.
pub fn mean_loss(model: &ClassifierModel, dataset: &[(Vec<f64>, usize)]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("loss dataset"));
    }
    let mut total = 0.0;
    for (x, label) in dataset {
        let pass = model.forward(x)?;
        total += cross_entropy(&pass.probs, *label)?;
    }
    Ok(total / dataset.len() as f64)
}

/// Fraction of samples whose prediction matches the label.
pub fn accuracy(model: &ClassifierModel, dataset: &[(Vec<f64>, usize)]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("accuracy dataset"));
    }
    let mut hits = 0usize;
    for (x, label) in dataset {
        if model.predict(x)? == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}
