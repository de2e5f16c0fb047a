//! Population oracles that emit unlimited labeled samples, and the finite
//! train sets drawn from them.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, argmax, Head, Labels, Matrix, ModelParams, ModelSpec};
use crate::rng::{self, Purpose, StreamRng};

/// Inputs with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Labels,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch { inputs: self.inputs.select_rows(idx), labels: self.labels.select(idx) }
    }

    /// Append `other` below `self`.
    pub fn extend(&mut self, other: &Batch) -> Result<()> {
        self.inputs.vstack(&other.inputs)?;
        self.labels.extend(&other.labels)
    }
}

/// `n` samples drawn once from an oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub data: Batch,
    pub source_seed: u64,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkActivation {
    Identity,
    Sign,
}

/// How regression-style labels are handed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    /// Real targets (`±1` under a sign link).
    Real,
    /// Sign link only: `+1 → class 1`, `−1 → class 0`.
    SignClasses,
}

/// `x ~ N(0, diag(cov_eigs))`, `y = σ(⟨β*, x⟩)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinear {
    pub beta_star: Vec<f64>,
    pub cov_eigs: Vec<f64>,
    pub activation: LinkActivation,
    pub encoding: LabelEncoding,
}

impl GaussianLinear {
    pub fn new(
        beta_star: Vec<f64>,
        cov_eigs: Vec<f64>,
        activation: LinkActivation,
        encoding: LabelEncoding,
    ) -> Result<Self> {
        if beta_star.len() != cov_eigs.len() || beta_star.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "beta_star has {} entries but cov_eigs has {}",
                beta_star.len(),
                cov_eigs.len()
            )));
        }
        if cov_eigs.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidConfig("covariance eigenvalues must be positive".into()));
        }
        if activation == LinkActivation::Identity && encoding == LabelEncoding::SignClasses {
            return Err(Error::InvalidConfig("class encoding needs the sign link".into()));
        }
        Ok(Self { beta_star, cov_eigs, activation, encoding })
    }

    pub fn dim(&self) -> usize {
        self.beta_star.len()
    }

    fn label(&self, x: &[f64]) -> f64 {
        let z = nn::dot(&self.beta_star, x);
        match self.activation {
            LinkActivation::Identity => z,
            // sgn(0) is taken as +1; a null event under a continuous law
            LinkActivation::Sign => {
                if z >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Input generator for a teacher task.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// `N(0, I)`.
    Gaussian,
    /// Uniform mixture of unit-variance Gaussians around fixed means.
    Mixture { means: Matrix },
}

impl Generator {
    /// A mixture of `components` Gaussians whose means are drawn from
    /// `N(0, spread² I)` using `seed`.
    pub fn mixture(input_dim: usize, components: usize, spread: f64, seed: u64) -> Result<Self> {
        if components == 0 || !(spread >= 0.0) {
            return Err(Error::InvalidConfig("mixture needs at least one component and spread >= 0".into()));
        }
        let mut rng = rng::stream(seed, Purpose::Generator, 0);
        let means = (0..components * input_dim)
            .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Generator::Mixture { means: Matrix::new(components, input_dim, means)? })
    }

    fn fill(&self, row: &mut [f64], rng: &mut StreamRng) {
        match self {
            Generator::Gaussian => row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            Generator::Mixture { means } => {
                let c = rng.random_range(0..means.rows());
                for (v, m) in row.iter_mut().zip(means.row(c)) {
                    *v = m + rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
}

/// Generator inputs labeled by the argmax of a frozen teacher network.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTask {
    input_dim: usize,
    generator: Generator,
    teacher: ModelParams,
}

impl TeacherTask {
    pub fn teacher(&self) -> &ModelParams {
        &self.teacher
    }

    pub fn classes(&self) -> usize {
        self.teacher.spec().output_dim()
    }
}

/// A population `D`. Immutable once built; share it freely.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    GaussianLinear(GaussianLinear),
    Teacher(TeacherTask),
    /// Inputs from `base`, labels uniform over `classes` and independent of them.
    RandomLabel { base: Box<Oracle>, classes: usize },
    /// Uniform draws with replacement from a fixed pool.
    PoolBacked { pool: Arc<TrainSet> },
}

/// Shape of the labels an oracle emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Classes(usize),
    Targets,
}

impl Oracle {
    pub fn random_label(base: Oracle, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig("random labels need at least 2 classes".into()));
        }
        Ok(Oracle::RandomLabel { base: Box::new(base), classes })
    }

    pub fn pool_backed(pool: Arc<TrainSet>) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::InvalidConfig("pool must be non-empty".into()));
        }
        Ok(Oracle::PoolBacked { pool })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Oracle::GaussianLinear(g) => g.dim(),
            Oracle::Teacher(t) => t.input_dim,
            Oracle::RandomLabel { base, .. } => base.input_dim(),
            Oracle::PoolBacked { pool } => pool.data.inputs.cols(),
        }
    }

    pub fn label_kind(&self) -> LabelKind {
        match self {
            Oracle::GaussianLinear(g) => match g.encoding {
                LabelEncoding::Real => LabelKind::Targets,
                LabelEncoding::SignClasses => LabelKind::Classes(2),
            },
            Oracle::Teacher(t) => LabelKind::Classes(t.classes()),
            Oracle::RandomLabel { classes, .. } => LabelKind::Classes(*classes),
            Oracle::PoolBacked { pool } => match &pool.data.labels {
                Labels::Targets(_) => LabelKind::Targets,
                Labels::Classes(c) => LabelKind::Classes(c.iter().max().map_or(2, |&m| (m + 1).max(2))),
            },
        }
    }

    /// Check that labels from this oracle fit `head`.
    pub fn check_head(&self, spec: &ModelSpec) -> Result<()> {
        if spec.input_dim != self.input_dim() {
            return Err(Error::InvalidConfig(format!(
                "model input_dim {} does not match the data dimension {}",
                spec.input_dim,
                self.input_dim()
            )));
        }
        match (self.label_kind(), spec.head) {
            (LabelKind::Classes(k), Head::SoftmaxXent { classes }) if k <= classes => Ok(()),
            (LabelKind::Classes(k), Head::Mse { outputs }) if outputs >= 2 && k <= outputs => Ok(()),
            (LabelKind::Targets, Head::Mse { outputs: 1 }) => Ok(()),
            (kind, head) => Err(Error::InvalidConfig(format!("labels {kind:?} do not fit head {head:?}"))),
        }
    }

    /// `count` i.i.d. draws, advancing `rng`.
    pub fn sample(&self, rng: &mut StreamRng, count: usize) -> Batch {
        match self {
            Oracle::GaussianLinear(g) => {
                let d = g.dim();
                let mut inputs = Matrix::zeros(count, d);
                let mut targets = Vec::with_capacity(count);
                for r in 0..count {
                    let row = inputs.row_mut(r);
                    for (v, &e) in row.iter_mut().zip(&g.cov_eigs) {
                        *v = e.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    }
                    targets.push(g.label(row));
                }
                let labels = match g.encoding {
                    LabelEncoding::Real => Labels::Targets(targets),
                    LabelEncoding::SignClasses => {
                        Labels::Classes(targets.iter().map(|&y| usize::from(y > 0.0)).collect())
                    }
                };
                Batch { inputs, labels }
            }
            Oracle::Teacher(t) => {
                let inputs = t.sample_inputs(rng, count);
                let labels = t.label(&inputs);
                Batch { inputs, labels }
            }
            Oracle::RandomLabel { base, classes } => {
                let inputs = base.sample(rng, count).inputs;
                let labels = Labels::Classes((0..count).map(|_| rng.random_range(0..*classes)).collect());
                Batch { inputs, labels }
            }
            Oracle::PoolBacked { pool } => {
                let idx: Vec<usize> = (0..count).map(|_| rng.random_range(0..pool.len())).collect();
                pool.data.select(&idx)
            }
        }
    }
}

impl TeacherTask {
    fn sample_inputs(&self, rng: &mut StreamRng, count: usize) -> Matrix {
        let mut inputs = Matrix::zeros(count, self.input_dim);
        for r in 0..count {
            self.generator.fill(inputs.row_mut(r), rng);
        }
        inputs
    }

    fn label(&self, inputs: &Matrix) -> Labels {
        if inputs.rows() == 0 {
            return Labels::Classes(vec![]);
        }
        let logits = nn::forward(&self.teacher, inputs).expect("teacher input shape fixed at construction");
        Labels::Classes((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }
}

/// Draw `n` samples from `oracle` on the train-set stream of `seed`.
pub fn draw_trainset(oracle: &Oracle, n: usize, seed: u64) -> Result<TrainSet> {
    if n == 0 {
        return Err(Error::InvalidConfig("train set size must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, Purpose::TrainSet, 0);
    Ok(TrainSet { data: oracle.sample(&mut rng, n), source_seed: seed })
}

/// `β* = e₁`, covariance eigenvalues ten 1's followed by 0.1's.
pub fn make_gaussian_linear(d: usize, activation: LinkActivation, encoding: LabelEncoding) -> Result<Oracle> {
    if d < 11 {
        return Err(Error::InvalidConfig(format!("dimension {d} leaves no low-variance coordinates; need d >= 11")));
    }
    let mut beta_star = vec![0.0; d];
    beta_star[0] = 1.0;
    let cov_eigs = (0..d).map(|i| if i < 10 { 1.0 } else { 0.1 }).collect();
    Ok(Oracle::GaussianLinear(GaussianLinear::new(beta_star, cov_eigs, activation, encoding)?))
}

/// Draws used to screen a random teacher for degenerate labelings.
const TEACHER_PROBE: usize = 10_000;
const TEACHER_ATTEMPTS: u64 = 64;

/// Generator inputs labeled by a frozen, randomly initialized teacher.
///
/// A teacher whose rarest class has frequency below `0.2 / k` on a probe of
/// 10⁴ draws is re-drawn from the next derived seed.
pub fn make_teacher_task(generator: Generator, teacher_spec: &ModelSpec, seed: u64) -> Result<Oracle> {
    teacher_spec.validate()?;
    let Head::SoftmaxXent { classes } = teacher_spec.head else {
        return Err(Error::InvalidConfig("teacher must have a softmax head".into()));
    };
    if let Generator::Mixture { means } = &generator {
        if means.cols() != teacher_spec.input_dim {
            return Err(Error::InvalidConfig("mixture means do not match the teacher input dim".into()));
        }
    }
    let floor = 0.2 / classes as f64;
    for attempt in 0..TEACHER_ATTEMPTS {
        let teacher = nn::init_params(teacher_spec, rng::derive_seed(seed, Purpose::Teacher, attempt))?;
        let task = TeacherTask { input_dim: teacher_spec.input_dim, generator: generator.clone(), teacher };
        let mut probe_rng = rng::stream(seed, Purpose::Teacher, 1000 + attempt);
        let Labels::Classes(labels) = task.label(&task.sample_inputs(&mut probe_rng, TEACHER_PROBE)) else {
            unreachable!("teacher labels are classes");
        };
        let freq = class_frequencies(&labels, classes);
        if freq.iter().all(|&f| f >= floor) {
            return Ok(Oracle::Teacher(task));
        }
    }
    Err(Error::InvalidConfig(format!("no balanced teacher found in {TEACHER_ATTEMPTS} attempts")))
}

pub fn class_frequencies(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts.into_iter().map(|c| c as f64 / labels.len().max(1) as f64).collect()
}

/// Stochastic input transform applied each time a sample is consumed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Augmentation {
    #[default]
    None,
    GaussianNoise { sigma: f64 },
    CoordDropout { p: f64 },
}

impl Augmentation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Augmentation::None => Ok(()),
            Augmentation::GaussianNoise { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            Augmentation::CoordDropout { p } if (0.0..1.0).contains(&p) => Ok(()),
            other => Err(Error::InvalidConfig(format!("invalid augmentation {other:?}"))),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(*self, Augmentation::None | Augmentation::GaussianNoise { sigma: 0.0 })
    }

    /// Transform `x` in place. Identity transforms draw nothing from `rng`.
    pub fn apply_in_place(&self, x: &mut [f64], rng: &mut StreamRng) {
        if self.is_identity() {
            return;
        }
        match *self {
            Augmentation::None => {}
            Augmentation::GaussianNoise { sigma } => {
                x.iter_mut().for_each(|v| *v += sigma * rng.sample::<f64, _>(StandardNormal));
            }
            Augmentation::CoordDropout { p } => {
                for v in x.iter_mut() {
                    if rng.random::<f64>() < p {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    pub fn augment(&self, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let mut out = x.to_vec();
        self.apply_in_place(&mut out, rng);
        out
    }

    /// Augment every row of `batch`.
    pub fn apply_batch(&self, batch: &mut Batch, rng: &mut StreamRng) {
        if self.is_identity() {
            return;
        }
        for r in 0..batch.inputs.rows() {
            self.apply_in_place(batch.inputs.row_mut(r), rng);
        }
    }
}
