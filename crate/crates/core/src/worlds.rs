//! Real World and Ideal World training loops and their coupling.
//!
//! Both worlds run the same model, optimizer, schedule and batch size from the
//! same initialization and are scored on the same evaluation set. They differ
//! only in where each minibatch comes from: the Real World cycles through a
//! fixed train set, the Ideal World draws every sample fresh from the oracle.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{draw_trainset, Augmentation, Batch, Oracle, TrainSet};
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_report, evaluate, BootstrapReport, MetricsRecord};
use crate::nn::{init_params, loss_and_grad, ModelParams, ModelSpec};
use crate::optimizers::{apply_update, OptimizerSpec, OptimizerState};
use crate::rng::{self, Purpose, StreamRng};

pub const DEFAULT_STOP_THRESHOLD: f64 = 0.01;
pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;

/// Everything that defines one training run: data, size, architecture,
/// optimizer, horizon, and seeds.
#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub oracle: Arc<Oracle>,
    pub n: usize,
    pub model: ModelSpec,
    pub optimizer: OptimizerSpec,
    pub total_steps: usize,
    pub augmentation: Augmentation,
    pub master_seed: u64,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub stop_threshold: f64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.augmentation.validate()?;
        self.oracle.check_head(&self.model)?;
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.eval_every == 0 || self.eval_samples == 0 {
            return Err(Error::InvalidConfig("eval_every and eval_samples must be at least 1".into()));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("stop_threshold {} outside (0, 1)", self.stop_threshold)));
        }
        Ok(())
    }

    /// Seed shared by both worlds' initializations.
    pub fn init_seed(&self) -> u64 {
        rng::derive_seed(self.master_seed, Purpose::Init, 0)
    }

    /// The Real World's train set for this seed.
    pub fn draw_trainset(&self) -> Result<TrainSet> {
        draw_trainset(&self.oracle, self.n, rng::derive_seed(self.master_seed, Purpose::TrainSet, 0))
    }

    /// The evaluation set shared by both worlds.
    pub fn draw_eval_set(&self) -> Batch {
        draw_eval_set(&self.oracle, self.eval_samples, self.master_seed)
    }

    fn eval_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = (0..=self.total_steps).step_by(self.eval_every).collect();
        if steps.last() != Some(&self.total_steps) {
            steps.push(self.total_steps);
        }
        steps
    }
}

/// `m` fresh oracle samples on the evaluation stream of `master_seed`.
pub fn draw_eval_set(oracle: &Oracle, m: usize, master_seed: u64) -> Batch {
    oracle.sample(&mut rng::stream(master_seed, Purpose::EvalSet, 0), m)
}

/// Where minibatches come from.
#[derive(Debug, Clone)]
pub enum SequenceMode {
    /// Fresh oracle samples every step (the Ideal World).
    Iid,
    /// Uniform draws with replacement from the train set.
    WithReplacement(Arc<TrainSet>),
    /// A fresh permutation of the train set every epoch.
    EpochShuffle(Arc<TrainSet>),
}

impl SequenceMode {
    pub fn tag(&self) -> &'static str {
        match self {
            SequenceMode::Iid => "iid",
            SequenceMode::WithReplacement(_) => "with_replacement",
            SequenceMode::EpochShuffle(_) => "epoch_shuffle",
        }
    }

    fn trainset(&self) -> Option<&Arc<TrainSet>> {
        match self {
            SequenceMode::Iid => None,
            SequenceMode::WithReplacement(s) | SequenceMode::EpochShuffle(s) => Some(s),
        }
    }

    fn data_purpose(&self) -> Purpose {
        match self {
            SequenceMode::Iid => Purpose::IdealData,
            _ => Purpose::RealData,
        }
    }
}

/// Measured history of one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub records: Vec<MetricsRecord>,
    pub converged_step: Option<usize>,
    pub aborted: bool,
}

impl Trajectory {
    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    pub fn steps(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.step).collect()
    }
}

/// First recorded step whose train error is below `threshold`.
pub fn stopping_time(traj: &Trajectory, threshold: f64) -> Option<usize> {
    traj.records.iter().find(|r| r.train_error < threshold).map(|r| r.step)
}

/// Produces the minibatch for each step of one world.
struct BatchSource<'a> {
    oracle: &'a Oracle,
    mode: &'a SequenceMode,
    augmentation: Augmentation,
    batch_size: usize,
    rng: StreamRng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> BatchSource<'a> {
    fn new(config: &'a WorldConfig, mode: &'a SequenceMode) -> Self {
        let order = mode.trainset().map_or_else(Vec::new, |s| (0..s.len()).collect());
        let cursor = order.len();
        Self {
            oracle: &config.oracle,
            mode,
            augmentation: config.augmentation,
            batch_size: config.optimizer.batch_size,
            rng: rng::stream(config.master_seed, mode.data_purpose(), 0),
            order,
            cursor,
        }
    }

    fn next_batch(&mut self) -> Batch {
        let mut batch = match self.mode {
            SequenceMode::Iid => self.oracle.sample(&mut self.rng, self.batch_size),
            SequenceMode::WithReplacement(set) => {
                let idx: Vec<usize> = (0..self.batch_size).map(|_| self.rng.random_range(0..set.len())).collect();
                set.data.select(&idx)
            }
            SequenceMode::EpochShuffle(set) => {
                let mut idx = Vec::with_capacity(self.batch_size);
                while idx.len() < self.batch_size {
                    if self.cursor == self.order.len() {
                        self.order.shuffle(&mut self.rng);
                        self.cursor = 0;
                    }
                    let take = (self.batch_size - idx.len()).min(self.order.len() - self.cursor);
                    idx.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
                    self.cursor += take;
                }
                set.data.select(&idx)
            }
        };
        self.augmentation.apply_batch(&mut batch, &mut self.rng);
        batch
    }
}

/// Owns the parameters and optimizer state of one run.
struct Learner<'a> {
    optimizer: &'a OptimizerSpec,
    params: ModelParams,
    state: OptimizerState,
    total_steps: usize,
}

impl<'a> Learner<'a> {
    fn new(model: &ModelSpec, optimizer: &'a OptimizerSpec, init_seed: u64, total_steps: usize) -> Result<Self> {
        let params = init_params(model, init_seed)?;
        let state = OptimizerState::new(&optimizer.kind, &params);
        Ok(Self { optimizer, params, state, total_steps })
    }

    fn step(&mut self, step: usize, batch: &Batch) -> Result<()> {
        let lr = self.optimizer.lr_at(step, self.total_steps)?;
        let (_, grads) = loss_and_grad(&self.params, &batch.inputs, &batch.labels)?;
        apply_update(&self.optimizer.kind, &mut self.params, &grads, &mut self.state, lr, step)?;
        if !self.params.is_finite() {
            return Err(Error::NonFiniteGradient { step });
        }
        Ok(())
    }
}

fn check_mode(config: &WorldConfig, mode: &SequenceMode) -> Result<()> {
    if let Some(set) = mode.trainset() {
        if set.len() != config.n {
            return Err(Error::InvalidConfig(format!(
                "{} mode uses a train set of {} samples but n = {}",
                mode.tag(),
                set.len(),
                config.n
            )));
        }
        if set.data.inputs.cols() != config.model.input_dim {
            return Err(Error::InvalidConfig("train set dimension does not match the model".into()));
        }
    }
    Ok(())
}

/// Train one world for `config.total_steps` steps.
///
/// Records are taken at step 0, every `eval_every` steps, and at the final
/// step. Train metrics use the full train set in finite modes and a fixed
/// probe of `eval_samples` oracle draws in iid mode. A non-finite update stops
/// the run and marks the trajectory aborted.
pub fn train_world(config: &WorldConfig, mode: &SequenceMode) -> Result<Trajectory> {
    config.validate()?;
    let eval = config.draw_eval_set();
    train_world_on(config, mode, &eval)
}

/// [`train_world`] with an explicit evaluation set.
pub fn train_world_on(config: &WorldConfig, mode: &SequenceMode, eval: &Batch) -> Result<Trajectory> {
    check_mode(config, mode)?;
    let probe;
    let train_eval: &Batch = match mode.trainset() {
        Some(set) => &set.data,
        None => {
            probe = config.oracle.sample(&mut rng::stream(config.master_seed, Purpose::TrainProbe, 0), config.eval_samples);
            &probe
        }
    };

    let mut learner = Learner::new(&config.model, &config.optimizer, config.init_seed(), config.total_steps)?;
    let mut source = BatchSource::new(config, mode);
    let mut traj = Trajectory { records: Vec::new(), converged_step: None, aborted: false };

    let record = |learner: &Learner, step: usize, traj: &mut Trajectory| -> Result<()> {
        let train = evaluate(&learner.params, train_eval)?;
        let test = evaluate(&learner.params, eval)?;
        let rec = MetricsRecord {
            step,
            lr: config.optimizer.lr_at(step, config.total_steps)?,
            train_error: train.error,
            train_soft_error: train.soft_error,
            test_error: test.error,
            test_soft_error: test.soft_error,
            test_loss: test.loss,
        };
        if traj.converged_step.is_none() && rec.train_error < config.stop_threshold {
            traj.converged_step = Some(step);
        }
        traj.records.push(rec);
        Ok(())
    };

    let eval_steps = config.eval_steps();
    let mut next_eval = eval_steps.iter().peekable();
    for step in 0..=config.total_steps {
        if next_eval.peek() == Some(&&step) {
            next_eval.next();
            record(&learner, step, &mut traj)?;
        }
        if step == config.total_steps {
            break;
        }
        let batch = source.next_batch();
        match learner.step(step, &batch) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient { .. }) => {
                traj.aborted = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}

/// The exact sample sequence `train_world(config, mode)` consumes, in order
/// (`total_steps · batch_size` rows, augmentation already applied).
pub fn generate_sequence(config: &WorldConfig, mode: &SequenceMode) -> Result<Batch> {
    config.validate()?;
    check_mode(config, mode)?;
    let mut source = BatchSource::new(config, mode);
    let mut seq = source.next_batch();
    for _ in 1..config.total_steps {
        seq.extend(&source.next_batch())?;
    }
    Ok(seq)
}

/// Train on `sequence` in order, `batch_size` samples per step, and return the
/// test soft-error on `eval`.
pub fn evaluate_g(
    model: &ModelSpec,
    optimizer: &OptimizerSpec,
    init_seed: u64,
    sequence: &Batch,
    eval: &Batch,
) -> Result<f64> {
    optimizer.validate()?;
    let b = optimizer.batch_size;
    if sequence.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if sequence.len() % b != 0 {
        return Err(Error::InvalidConfig(format!(
            "sequence of {} samples is not a multiple of batch size {b}",
            sequence.len()
        )));
    }
    let total_steps = sequence.len() / b;
    let mut learner = Learner::new(model, optimizer, init_seed, total_steps)?;
    for step in 0..total_steps {
        let idx: Vec<usize> = (step * b..(step + 1) * b).collect();
        learner.step(step, &sequence.select(&idx))?;
    }
    evaluate(&learner.params, eval)?.soft_error.ok_or(Error::UnsupportedHead("soft-error"))
}

/// Both worlds of one coupled run and the gap between them.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledReport {
    pub real: Trajectory,
    pub ideal: Trajectory,
    /// `None` when either world aborted.
    pub report: Option<BootstrapReport>,
}

impl CoupledReport {
    pub fn aborted(&self) -> bool {
        self.real.aborted || self.ideal.aborted
    }
}

/// Real World (epoch shuffle over a fresh train set) against Ideal World (iid).
pub fn run_coupled(config: &WorldConfig) -> Result<CoupledReport> {
    config.validate()?;
    let trainset = Arc::new(config.draw_trainset()?);
    run_coupled_on(config, trainset)
}

/// [`run_coupled`] with an explicit Real-World train set.
pub fn run_coupled_on(config: &WorldConfig, trainset: Arc<TrainSet>) -> Result<CoupledReport> {
    config.validate()?;
    let eval = config.draw_eval_set();
    let real = train_world_on(config, &SequenceMode::EpochShuffle(trainset), &eval)?;
    let ideal = train_world_on(config, &SequenceMode::Iid, &eval)?;
    let report = if real.aborted || ideal.aborted {
        None
    } else {
        Some(bootstrap_report(&real, &ideal, config.stop_threshold)?)
    };
    Ok(CoupledReport { real, ideal, report })
}
