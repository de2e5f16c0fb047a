//! Gradient-descent family optimizers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant,
    /// Half-cosine from `base_lr` down to 0. Without an explicit horizon the
    /// run's total step count is used.
    Cosine {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        total_steps: Option<usize>,
    },
    /// Multiply by `drop_factor` at each milestone, given as a fraction of the run.
    StepDrop { drop_factor: f64, milestones: Vec<f64> },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Constant => Ok(()),
            Schedule::Cosine { total_steps: Some(0) } => {
                Err(Error::InvalidConfig("cosine horizon must be at least 1".into()))
            }
            Schedule::Cosine { .. } => Ok(()),
            Schedule::StepDrop { drop_factor, milestones } => {
                if !(*drop_factor > 0.0 && drop_factor.is_finite()) {
                    return Err(Error::InvalidConfig("drop_factor must be positive".into()));
                }
                if milestones.iter().any(|m| !(*m > 0.0 && *m < 1.0)) {
                    return Err(Error::InvalidConfig("milestones must lie in (0, 1)".into()));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidConfig("milestones must be strictly increasing".into()));
                }
                Ok(())
            }
        }
    }

    /// Learning rate used for the update that starts at `step`.
    pub fn lr_at(&self, base_lr: f64, step: usize, total_steps: usize) -> Result<f64> {
        if step > total_steps {
            return Err(Error::StepOutOfRange { step, total_steps });
        }
        Ok(match self {
            Schedule::Constant => base_lr,
            Schedule::Cosine { total_steps: horizon } => {
                let horizon = horizon.unwrap_or(total_steps).max(1);
                let frac = (step as f64 / horizon as f64).min(1.0);
                base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            Schedule::StepDrop { drop_factor, milestones } => {
                let frac = step as f64 / total_steps.max(1) as f64;
                let passed = milestones.iter().filter(|&&m| frac >= m).count();
                base_lr * drop_factor.powi(passed as i32)
            }
        })
    }
}

/// Free function form of [`Schedule::lr_at`].
pub fn lr_at(schedule: &Schedule, base_lr: f64, step: usize, total_steps: usize) -> Result<f64> {
    schedule.lr_at(base_lr, step, total_steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Gd,
    Sgd {
        momentum: f64,
    },
    Adam {
        #[serde(default = "adam_beta1")]
        beta1: f64,
        #[serde(default = "adam_beta2")]
        beta2: f64,
        #[serde(default = "adam_eps")]
        eps: f64,
    },
}

fn adam_beta1() -> f64 {
    0.9
}
fn adam_beta2() -> f64 {
    0.999
}
fn adam_eps() -> f64 {
    1e-8
}

/// Learning rate conventionally paired with default Adam.
pub const ADAM_DEFAULT_LR: f64 = 0.001;

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam { beta1: adam_beta1(), beta2: adam_beta2(), eps: adam_eps() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        match self.kind {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::InvalidConfig(format!("momentum {momentum} outside [0, 1)")));
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::InvalidConfig("adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
                }
            }
            _ => {}
        }
        self.schedule.validate()
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> Result<f64> {
        self.schedule.lr_at(self.base_lr, step, total_steps)
    }
}

/// Per-run optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Gd,
    Sgd { velocity: Vec<Vec<f64>> },
    Adam { first: Vec<Vec<f64>>, second: Vec<Vec<f64>>, step: u64 },
}

impl OptimizerState {
    pub fn new(kind: &OptimizerKind, params: &ModelParams) -> Self {
        let zeros = || params.blocks().map(|b| vec![0.0; b.len()]).collect::<Vec<_>>();
        match kind {
            OptimizerKind::Gd => OptimizerState::Gd,
            OptimizerKind::Sgd { .. } => OptimizerState::Sgd { velocity: zeros() },
            OptimizerKind::Adam { .. } => OptimizerState::Adam { first: zeros(), second: zeros(), step: 0 },
        }
    }

    /// Number of Adam updates applied so far; `None` for other optimizers.
    pub fn adam_steps(&self) -> Option<u64> {
        match self {
            OptimizerState::Adam { step, .. } => Some(*step),
            _ => None,
        }
    }
}

/// One optimizer step. `step` is only used to label a non-finite-gradient error.
///
/// GD/SGD: `v ← μv + g; θ ← θ − lr·v`. Adam: bias-corrected moments.
pub fn apply_update(
    kind: &OptimizerKind,
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    step: usize,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFiniteGradient { step });
    }
    if grads.layers.len() != params.layers.len()
        || grads.blocks().zip(params.blocks()).any(|(g, p)| g.len() != p.len())
    {
        return Err(Error::Shape("gradients do not match parameters".into()));
    }
    match (kind, state) {
        (OptimizerKind::Gd, OptimizerState::Gd) => {
            for (p, g) in params.blocks_mut().zip(grads.blocks()) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
        }
        (OptimizerKind::Sgd { momentum }, OptimizerState::Sgd { velocity }) => {
            for ((p, g), v) in params.blocks_mut().zip(grads.blocks()).zip(velocity.iter_mut()) {
                for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
        }
        (OptimizerKind::Adam { beta1, beta2, eps }, OptimizerState::Adam { first, second, step: t }) => {
            *t += 1;
            let c1 = 1.0 - beta1.powi(*t as i32);
            let c2 = 1.0 - beta2.powi(*t as i32);
            for (((p, g), m), v) in params.blocks_mut().zip(grads.blocks()).zip(first.iter_mut()).zip(second.iter_mut()) {
                for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        _ => return Err(Error::InvalidConfig("optimizer state does not match optimizer kind".into())),
    }
    Ok(())
}
