//! Dense models: linear maps and ReLU/identity MLPs with a softmax
//! cross-entropy or squared-error head, plus hand-written backprop.
//!
//! Weights of layer `l` are stored `out × in`, so a batch `X` (rows are
//! samples) maps to `X · Wᵀ + b`. Losses are means over the batch.

mod matrix;

pub use matrix::{axpy, dot, Matrix};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// `classes` logits, softmax, cross-entropy against a class index.
    SoftmaxXent { classes: usize },
    /// Squared error taken directly on the raw outputs.
    Mse { outputs: usize },
}

impl Head {
    pub fn output_dim(&self) -> usize {
        match *self {
            Head::SoftmaxXent { classes } => classes,
            Head::Mse { outputs } => outputs,
        }
    }
}

fn default_true() -> bool {
    true
}

/// Architecture description. An empty `hidden_widths` is a linear model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    /// Whether layers carry a trainable bias. Bias-free linear models are
    /// exactly `x ↦ ⟨β, x⟩`.
    #[serde(default = "default_true")]
    pub bias: bool,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, head: Head) -> Self {
        Self { input_dim, hidden_widths: vec![], activation: Activation::Identity, head, bias: true }
    }

    pub fn mlp(input_dim: usize, hidden_widths: Vec<usize>, activation: Activation, head: Head) -> Self {
        Self { input_dim, hidden_widths, activation, head, bias: true }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// `(fan_in, fan_out)` for each layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self.hidden_widths.iter().chain(std::iter::once(&self.output_dim())) {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be at least 1".into()));
        }
        if let Some(i) = self.hidden_widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {i} has width 0")));
        }
        match self.head {
            Head::SoftmaxXent { classes } if classes < 2 => {
                Err(Error::InvalidSpec(format!("softmax head needs at least 2 classes, got {classes}")))
            }
            Head::Mse { outputs: 0 } => Err(Error::InvalidSpec("mse head needs at least 1 output".into())),
            _ => Ok(()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| o * i + o).sum()
    }
}

/// Labels for a batch: class indices, or real targets laid out row-major
/// (`rows × output_dim`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labels {
    Classes(Vec<usize>),
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes(c) => Labels::Classes(idx.iter().map(|&i| c[i]).collect()),
            Labels::Targets(t) => Labels::Targets(idx.iter().map(|&i| t[i]).collect()),
        }
    }

    /// Append `other`; both must be the same variant.
    pub fn extend(&mut self, other: &Labels) -> Result<()> {
        match (self, other) {
            (Labels::Classes(a), Labels::Classes(b)) => a.extend_from_slice(b),
            (Labels::Targets(a), Labels::Targets(b)) => a.extend_from_slice(b),
            _ => return Err(Error::Shape("cannot mix class labels and real targets".into())),
        }
        Ok(())
    }

    pub fn empty_like(&self) -> Labels {
        match self {
            Labels::Classes(_) => Labels::Classes(Vec::new()),
            Labels::Targets(_) => Labels::Targets(Vec::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weights: Matrix::zeros(fan_out, fan_in), bias: vec![0.0; fan_out] }
    }
}

/// Trainable parameters together with the spec they instantiate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    spec: ModelSpec,
    pub layers: Vec<Layer>,
}

/// Gradient of a mean loss; one entry per layer, congruent with [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self { layers: params.spec.layer_dims().iter().map(|&(i, o)| Layer::zeros(i, o)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Parameter blocks in a fixed order: each layer's weights then its bias.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.data(), l.bias.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
    }
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_dims().iter().map(|&(i, o)| Layer::zeros(i, o)).collect();
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn from_layers(spec: &ModelSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::Shape(format!("spec has {} layers, got {}", dims.len(), layers.len())));
        }
        for (l, (&(fan_in, fan_out), layer)) in dims.iter().zip(&layers).enumerate() {
            if layer.weights.rows() != fan_out || layer.weights.cols() != fan_in || layer.bias.len() != fan_out {
                return Err(Error::Shape(format!(
                    "layer {l}: expected {fan_out}x{fan_in} weights and {fan_out} biases"
                )));
            }
        }
        Ok(Self { spec: spec.clone(), layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.data(), l.bias.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Weights `U(−1/√fan_in, 1/√fan_in)`, biases zero. Bit-reproducible per seed.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(spec)?;
    let mut rng = rng::stream(seed, Purpose::Init, 0);
    for layer in &mut params.layers {
        let bound = 1.0 / (layer.weights.cols() as f64).sqrt();
        for w in layer.weights.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
    }
    Ok(params)
}

struct Cache {
    /// Input to each layer (`inputs[0]` is the batch).
    inputs: Vec<Matrix>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Matrix>,
}

fn check_batch(params: &ModelParams, batch: &Matrix) -> Result<()> {
    if batch.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch.cols() != params.spec.input_dim {
        return Err(Error::Shape(format!(
            "batch has {} columns, model expects {}",
            batch.cols(),
            params.spec.input_dim
        )));
    }
    Ok(())
}

fn affine(layer: &Layer, x: &Matrix) -> Matrix {
    let mut z = x.matmul_t(&layer.weights).expect("shapes checked by caller");
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

fn forward_cached(params: &ModelParams, batch: &Matrix) -> (Matrix, Cache) {
    let act = params.spec.activation;
    let last = params.layers.len() - 1;
    let mut cache = Cache { inputs: Vec::with_capacity(last + 1), pre: Vec::with_capacity(last) };
    let mut x = batch.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = affine(layer, &x);
        cache.inputs.push(x);
        if l == last {
            return (z, cache);
        }
        let mut a = z.clone();
        a.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        cache.pre.push(z);
        x = a;
    }
    unreachable!("a model has at least one layer")
}

/// Raw outputs (logits or predictions), one row per sample.
pub fn forward(params: &ModelParams, batch: &Matrix) -> Result<Matrix> {
    check_batch(params, batch)?;
    let act = params.spec.activation;
    let mut x = affine(&params.layers[0], batch);
    for layer in &params.layers[1..] {
        x.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        x = affine(layer, &x);
    }
    Ok(x)
}

/// Softmax with max-subtraction.
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln Σ exp(z)`, stable.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_labels(params: &ModelParams, rows: usize, labels: &Labels) -> Result<()> {
    match (params.spec.head, labels) {
        (Head::SoftmaxXent { classes }, Labels::Classes(c)) => {
            if c.len() != rows {
                return Err(Error::Shape(format!("{} labels for {rows} samples", c.len())));
            }
            if let Some(bad) = c.iter().find(|&&y| y >= classes) {
                return Err(Error::Shape(format!("class {bad} out of range for {classes} classes")));
            }
        }
        (Head::Mse { outputs }, Labels::Targets(t)) => {
            if t.len() != rows * outputs {
                return Err(Error::Shape(format!("{} targets for {rows} samples x {outputs} outputs", t.len())));
            }
        }
        (Head::Mse { outputs }, Labels::Classes(c)) => {
            if outputs < 2 {
                return Err(Error::Shape("class labels on a single-output mse head".into()));
            }
            if c.len() != rows || c.iter().any(|&y| y >= outputs) {
                return Err(Error::Shape("class labels do not fit the mse head".into()));
            }
        }
        (Head::SoftmaxXent { .. }, Labels::Targets(_)) => {
            return Err(Error::Shape("softmax head needs class labels".into()));
        }
    }
    Ok(())
}

/// Per-batch loss and `dLoss/dLogits`, both for the batch mean.
fn head_loss(head: Head, logits: &Matrix, labels: &Labels, want_grad: bool) -> (f64, Option<Matrix>) {
    let rows = logits.rows();
    let scale = 1.0 / rows as f64;
    let mut grad = want_grad.then(|| Matrix::zeros(rows, logits.cols()));
    let mut total = 0.0;
    match (head, labels) {
        (Head::SoftmaxXent { .. }, Labels::Classes(c)) => {
            for r in 0..rows {
                let z = logits.row(r);
                total += log_sum_exp(z) - z[c[r]];
                if let Some(g) = grad.as_mut() {
                    let p = softmax_probs(z);
                    let dst = g.row_mut(r);
                    for (k, (d, pk)) in dst.iter_mut().zip(p).enumerate() {
                        *d = scale * (pk - if k == c[r] { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        (Head::Mse { .. }, labels) => {
            let cols = logits.cols();
            for r in 0..rows {
                let z = logits.row(r);
                for k in 0..cols {
                    let target = match labels {
                        Labels::Targets(t) => t[r * cols + k],
                        Labels::Classes(c) => f64::from(u8::from(c[r] == k)),
                    };
                    let diff = z[k] - target;
                    total += diff * diff;
                    if let Some(g) = grad.as_mut() {
                        g.set(r, k, 2.0 * scale * diff);
                    }
                }
            }
        }
        (Head::SoftmaxXent { .. }, Labels::Targets(_)) => unreachable!("rejected by check_labels"),
    }
    (total * scale, grad)
}

/// Mean loss over the batch.
pub fn loss(params: &ModelParams, batch: &Matrix, labels: &Labels) -> Result<f64> {
    check_batch(params, batch)?;
    check_labels(params, batch.rows(), labels)?;
    let logits = forward(params, batch)?;
    Ok(head_loss(params.spec.head, &logits, labels, false).0)
}

/// Mean loss over the batch and its exact gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &Matrix, labels: &Labels) -> Result<(f64, Gradients)> {
    check_batch(params, batch)?;
    check_labels(params, batch.rows(), labels)?;
    let (logits, cache) = forward_cached(params, batch);
    let (value, dz) = head_loss(params.spec.head, &logits, labels, true);
    let mut dz = dz.expect("gradient requested");

    let act = params.spec.activation;
    let mut grads = Gradients::zeros_like(params);
    for l in (0..params.layers.len()).rev() {
        let g = &mut grads.layers[l];
        g.weights = dz.t_matmul(&cache.inputs[l])?;
        if params.spec.bias {
            for r in 0..dz.rows() {
                for (b, v) in g.bias.iter_mut().zip(dz.row(r)) {
                    *b += v;
                }
            }
        }
        if l > 0 {
            let mut da = dz.matmul(&params.layers[l].weights)?;
            for (d, z) in da.data_mut().iter_mut().zip(cache.pre[l - 1].data()) {
                *d *= act.derivative(*z);
            }
            dz = da;
        }
    }
    Ok((value, grads))
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences, over a deterministic subsample of coordinates (all of
/// them when the model has at most [`GRAD_CHECK_COORDS`]).
///
/// The relative error of a coordinate is `|a − f| / max(|a|, |f|, 1e-4)`; the
/// floor keeps coordinates whose true derivative is ~0 from dividing
/// finite-difference rounding noise by zero.
pub fn grad_check(params: &ModelParams, batch: &Matrix, labels: &Labels, eps: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidConfig(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    let (_, analytic) = loss_and_grad(params, batch, labels)?;

    // (block, offset) for every trainable coordinate
    let mut coords = Vec::new();
    for (b, block) in params.blocks().enumerate() {
        let is_bias = b % 2 == 1;
        if is_bias && !params.spec.bias {
            continue;
        }
        coords.extend((0..block.len()).map(|i| (b, i)));
    }
    let chosen: Vec<usize> = if coords.len() <= GRAD_CHECK_COORDS {
        (0..coords.len()).collect()
    } else {
        let mut rng = rng::stream(0, Purpose::GradCheck, coords.len() as u64);
        let mut picked = index::sample(&mut rng, coords.len(), GRAD_CHECK_COORDS).into_vec();
        picked.sort_unstable();
        picked
    };

    let analytic_blocks: Vec<&[f64]> = analytic.blocks().collect();
    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    for &c in &chosen {
        let (b, i) = coords[c];
        let original = params.blocks().nth(b).expect("block exists")[i];
        set_coord(&mut probe, b, i, original + eps);
        let up = loss(&probe, batch, labels)?;
        set_coord(&mut probe, b, i, original - eps);
        let down = loss(&probe, batch, labels)?;
        set_coord(&mut probe, b, i, original);

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic_blocks[b][i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Coordinates compared by [`grad_check`] on large models.
pub const GRAD_CHECK_COORDS: usize = 128;

fn set_coord(params: &mut ModelParams, block: usize, i: usize, v: f64) {
    params.blocks_mut().nth(block).expect("block exists")[i] = v;
}
