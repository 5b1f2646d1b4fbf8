//! Fully connected ReLU networks with softmax cross-entropy loss, exact
//! backpropagation and constant-rate SGD.
//!
//! Parameters live in one flat `Vec<f64>`. For each layer, in input-to-output
//! order, the weight matrix comes first (row-major, `fan_out x fan_in`)
//! followed by the bias vector. Every other module treats a model as nothing
//! more than this vector plus the spec that explains it.

mod format;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{LabeledDataset, Sample};
use crate::error::{invalid, Result};
use crate::seed;

pub use format::{decode_model, encode_model, read_model, write_model, MODEL_MAGIC};
pub(crate) use format::read_model_from as read_model_from_wire;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    #[default]
    ScaledUniform,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init_scheme: InitScheme,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    /// Start of the weight block in the flat vector.
    offset: usize,
}

impl LayerShape {
    fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }
}

impl ModelSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_layers,
            num_classes,
            activation: Activation::Relu,
            init_scheme: InitScheme::ScaledUniform,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid("model needs at least two classes"));
        }
        if self.input_dim == 0 {
            return Err(invalid("input_dim must be >= 1"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(invalid("hidden widths must be >= 1"));
        }
        Ok(())
    }

    fn widths(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.input_dim)
            .chain(self.hidden_layers.iter().copied())
            .chain(std::iter::once(self.num_classes))
    }

    fn layers(&self) -> Vec<LayerShape> {
        let widths: Vec<usize> = self.widths().collect();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        let widths: Vec<usize> = self.widths().collect();
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub init_seed: u64,
    /// Total SGD steps applied since initialisation.
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<f64>,
    provenance: Provenance,
}

impl Model {
    /// Wraps an explicit parameter vector.
    pub fn from_params(spec: ModelSpec, params: Vec<f64>, provenance: Provenance) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.parameter_count() {
            return Err(invalid(format!(
                "{} parameters supplied, spec needs {}",
                params.len(),
                spec.parameter_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(Self {
            spec,
            params,
            provenance,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Output-layer logits for one feature vector.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features.len())?;
        let mut ws = Workspace::new(&self.spec);
        self.forward(features, &mut ws);
        Ok(ws.acts.last().expect("output layer").clone())
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(features)?))
    }

    /// Bitwise equality of the parameter vectors (NaN-free by invariant).
    pub fn same_params(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.spec.input_dim {
            return Err(invalid(format!(
                "feature dimension {dim} does not match model input {}",
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        let last = ws.layers.len() - 1;
        for (l, shape) in ws.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            let w = &self.params[shape.offset..shape.bias_offset()];
            let b = &self.params[shape.bias_offset()..shape.bias_offset() + shape.fan_out];
            for (j, o) in out.iter_mut().enumerate() {
                let row = &w[j * shape.fan_in..(j + 1) * shape.fan_in];
                let z = b[j] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                *o = if l == last { z } else { z.max(0.0) };
            }
        }
    }

    /// Adds this sample's loss gradient into `grad`; returns its loss.
    fn backprop(&self, sample: &Sample, ws: &mut Workspace, grad: &mut [f64]) -> f64 {
        self.forward(&sample.features, ws);
        let n_layers = ws.layers.len();
        let logits = &ws.acts[n_layers];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_norm = max + sum_exp.ln();
        let loss = log_norm - logits[sample.label];

        let delta = &mut ws.deltas[n_layers - 1];
        for (k, (d, z)) in delta.iter_mut().zip(logits).enumerate() {
            *d = (z - log_norm).exp() - if k == sample.label { 1.0 } else { 0.0 };
        }
        for l in (0..n_layers).rev() {
            let shape = ws.layers[l];
            let input = &ws.acts[l];
            let (lower, upper) = ws.deltas.split_at_mut(l);
            let delta = &upper[0];
            let bo = shape.bias_offset();
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[shape.offset + j * shape.fan_in..shape.offset + (j + 1) * shape.fan_in];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
                grad[bo + j] += d;
            }
            if l > 0 {
                let prev = &mut lower[l - 1];
                let w = &self.params[shape.offset..bo];
                for (i, p) in prev.iter_mut().enumerate() {
                    *p = if input[i] > 0.0 {
                        delta
                            .iter()
                            .enumerate()
                            .map(|(j, d)| d * w[j * shape.fan_in + i])
                            .sum()
                    } else {
                        0.0
                    };
                }
            }
        }
        loss
    }
}

/// Per-call scratch buffers: activations per layer and backprop deltas.
struct Workspace {
    layers: Vec<LayerShape>,
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        let layers = spec.layers();
        let acts = spec.widths().map(|w| vec![0.0; w]).collect();
        let deltas = layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
        Self {
            layers,
            acts,
            deltas,
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Flat gradient, laid out like `Model::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|g| g.abs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

pub fn init_model(spec: &ModelSpec, seed: u64) -> Model {
    let mut rng = seed::derived_rng(seed, &[seed::TAG_INIT]);
    let mut params = vec![0.0; spec.parameter_count()];
    for shape in spec.layers() {
        let limit = (6.0 / shape.fan_in as f64).sqrt();
        for w in &mut params[shape.offset..shape.bias_offset()] {
            *w = rng.random_range(-limit..limit);
        }
    }
    Model {
        spec: spec.clone(),
        params,
        provenance: Provenance {
            init_seed: seed,
            steps: 0,
        },
    }
}

fn batch_loss_grad<'a>(
    model: &Model,
    batch: impl ExactSizeIterator<Item = &'a Sample>,
) -> Result<(f64, GradVector)> {
    let n = batch.len();
    if n == 0 {
        return Err(invalid("batch is empty"));
    }
    let mut ws = Workspace::new(&model.spec);
    let mut grad = vec![0.0; model.params.len()];
    let mut loss = 0.0;
    for s in batch {
        model.check_dim(s.features.len())?;
        if s.label >= model.spec.num_classes {
            return Err(invalid(format!("label {} out of range for model", s.label)));
        }
        loss += model.backprop(s, &mut ws, &mut grad);
    }
    let scale = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, GradVector(grad)))
}

/// Mean cross-entropy over `batch` and its exact gradient.
pub fn loss_and_grad(model: &Model, batch: &[Sample]) -> Result<(f64, GradVector)> {
    batch_loss_grad(model, batch.iter())
}

/// `params - alpha * grad`.
pub fn sgd_step(model: &Model, grad: &GradVector, alpha: f64) -> Result<Model> {
    if grad.0.len() != model.params.len() {
        return Err(invalid(format!(
            "gradient has {} entries, model has {}",
            grad.0.len(),
            model.params.len()
        )));
    }
    let mut next = model.clone();
    apply_step(&mut next, grad, alpha);
    Ok(next)
}

fn apply_step(model: &mut Model, grad: &GradVector, alpha: f64) {
    model
        .params
        .iter_mut()
        .zip(&grad.0)
        .for_each(|(p, g)| *p -= alpha * g);
    model.provenance.steps += 1;
}

/// Mini-batch SGD. Epoch `e` visits the data in the permutation drawn from
/// `(shuffle_seed, e)`, so the result is a pure function of the inputs.
pub fn train(model: &Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    model.check_dim(data.dim())?;
    if data.num_classes() > model.spec.num_classes {
        return Err(invalid("dataset has more classes than the model"));
    }
    let mut current = model.clone();
    let samples = data.samples();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        let mut rng = seed::derived_rng(cfg.shuffle_seed, &[seed::TAG_SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (_, grad) = batch_loss_grad(&current, chunk.iter().map(|&i| &samples[i]))?;
            apply_step(&mut current, &grad, cfg.learning_rate);
        }
    }
    if current.params.iter().any(|p| !p.is_finite()) {
        return Err(invalid("training diverged to non-finite parameters"));
    }
    Ok(current)
}

/// Full-batch gradient descent for `steps` steps.
pub fn descend(model: &Model, data: &LabeledDataset, alpha: f64, steps: usize) -> Result<Model> {
    let mut current = model.clone();
    for _ in 0..steps {
        let (_, grad) = batch_loss_grad(&current, data.iter())?;
        apply_step(&mut current, &grad, alpha);
    }
    Ok(current)
}

/// Fraction of samples whose predicted class equals the label.
pub fn evaluate(model: &Model, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("cannot evaluate on an empty dataset"));
    }
    model.check_dim(data.dim())?;
    let mut ws = Workspace::new(&model.spec);
    let correct = data
        .iter()
        .filter(|s| {
            model.forward(&s.features, &mut ws);
            argmax(ws.acts.last().expect("output layer")) == s.label
        })
        .count();
    Ok(correct as f64 / data.len() as f64)
}
