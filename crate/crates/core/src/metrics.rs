//! Soft-error, hard error, losses, and the bootstrap-gap report.

use serde::{Deserialize, Serialize};

use crate::distributions::Batch;
use crate::error::{Error, Result};
use crate::nn::{self, argmax, log_sum_exp, softmax_probs, Head, Labels, Matrix, ModelParams};
use crate::worlds::Trajectory;

/// One evaluation point of one world.
///
/// Soft-errors are `None` for squared-error heads, where they are undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub step: usize,
    pub lr: f64,
    pub train_error: f64,
    pub train_soft_error: Option<f64>,
    pub test_error: f64,
    pub test_soft_error: Option<f64>,
    /// Cross-entropy for softmax heads, mean squared error for mse heads.
    pub test_loss: f64,
}

impl MetricsRecord {
    /// The quantity the bootstrap gap is measured in: soft-error when defined,
    /// hard error otherwise.
    pub fn test_gap_metric(&self) -> f64 {
        self.test_soft_error.unwrap_or(self.test_error)
    }

    pub fn train_gap_metric(&self) -> f64 {
        self.train_soft_error.unwrap_or(self.train_error)
    }
}

/// All statistics of one model on one labeled set, from a single forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub error: f64,
    pub soft_error: Option<f64>,
    pub loss: f64,
}

pub fn evaluate(params: &ModelParams, data: &Batch) -> Result<EvalStats> {
    let logits = nn::forward(params, &data.inputs)?;
    stats_from_outputs(params.spec().head, &logits, &data.labels)
}

fn stats_from_outputs(head: Head, out: &Matrix, labels: &Labels) -> Result<EvalStats> {
    let rows = out.rows();
    if labels.len() != rows * if matches!(labels, Labels::Targets(_)) { out.cols() } else { 1 } {
        return Err(Error::Shape(format!("{} labels for {rows} outputs", labels.len())));
    }
    let (mut wrong, mut soft, mut loss) = (0usize, 0.0, 0.0);
    match (head, labels) {
        (Head::SoftmaxXent { .. }, Labels::Classes(c)) => {
            for r in 0..rows {
                let z = out.row(r);
                let y = c[r];
                wrong += usize::from(argmax(z) != y);
                soft += 1.0 - softmax_probs(z)[y];
                loss += log_sum_exp(z) - z[y];
            }
            let n = rows as f64;
            Ok(EvalStats { error: wrong as f64 / n, soft_error: Some(soft / n), loss: loss / n })
        }
        (Head::Mse { .. }, Labels::Targets(t)) => {
            let cols = out.cols();
            for r in 0..rows {
                for k in 0..cols {
                    let (f, y) = (out.get(r, k), t[r * cols + k]);
                    loss += (f - y).powi(2);
                    // sign decoding; 0 decodes to +1 like sgn(0) in the label link
                    wrong += usize::from((f >= 0.0) != (y >= 0.0));
                }
            }
            let n = (rows * cols) as f64;
            Ok(EvalStats { error: wrong as f64 / n, soft_error: None, loss: loss / rows as f64 })
        }
        (Head::Mse { .. }, Labels::Classes(c)) => {
            for r in 0..rows {
                let z = out.row(r);
                wrong += usize::from(argmax(z) != c[r]);
                loss += z.iter().enumerate().map(|(k, v)| (v - f64::from(u8::from(k == c[r]))).powi(2)).sum::<f64>();
            }
            let n = rows as f64;
            Ok(EvalStats { error: wrong as f64 / n, soft_error: None, loss: loss / n })
        }
        (Head::SoftmaxXent { .. }, Labels::Targets(_)) => Err(Error::Shape("softmax head needs class labels".into())),
    }
}

/// Mean of `1 − p(correct class)`.
pub fn soft_error(params: &ModelParams, inputs: &Matrix, labels: &Labels) -> Result<f64> {
    if !matches!(params.spec().head, Head::SoftmaxXent { .. }) {
        return Err(Error::UnsupportedHead("soft-error"));
    }
    let out = nn::forward(params, inputs)?;
    Ok(stats_from_outputs(params.spec().head, &out, labels)?.soft_error.expect("softmax head"))
}

/// Fraction of argmax (or sign) mismatches. Ties go to the lower class.
pub fn hard_error(params: &ModelParams, inputs: &Matrix, labels: &Labels) -> Result<f64> {
    let out = nn::forward(params, inputs)?;
    Ok(stats_from_outputs(params.spec().head, &out, labels)?.error)
}

/// Mean squared residual of a single-output mse model.
pub fn test_mse(params: &ModelParams, inputs: &Matrix, targets: &[f64]) -> Result<f64> {
    if params.spec().head != (Head::Mse { outputs: 1 }) {
        return Err(Error::UnsupportedHead("mse"));
    }
    let out = nn::forward(params, inputs)?;
    if targets.len() != out.rows() {
        return Err(Error::Shape(format!("{} targets for {} samples", targets.len(), out.rows())));
    }
    Ok(out.data().iter().zip(targets).map(|(f, y)| (f - y).powi(2)).sum::<f64>() / targets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMetric {
    SoftError,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsPoint {
    pub step: usize,
    pub eps: f64,
}

/// ε(t) = Real test metric − Ideal test metric at shared eval steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapReport {
    pub metric: GapMetric,
    pub eps_series: Vec<EpsPoint>,
    /// First eval step where Real-World train error fell below the threshold.
    pub t0: Option<usize>,
    /// Step the `*_at_t0` fields were read at: `t0`, or the final step when
    /// the threshold was never reached.
    pub t0_effective: usize,
    pub eps_at_t0: f64,
    pub abs_eps_at_t0: f64,
    pub max_abs_eps_pre_t0: f64,
    /// Real test minus Real train, in the same units as ε.
    pub gen_gap_at_t0: f64,
}

impl BootstrapReport {
    pub fn t0_reached(&self) -> bool {
        self.t0.is_some()
    }
}

pub fn bootstrap_report(real: &Trajectory, ideal: &Trajectory, stop_threshold: f64) -> Result<BootstrapReport> {
    if real.records.is_empty() {
        return Err(Error::MismatchedGrid("real trajectory is empty".into()));
    }
    if real.records.len() != ideal.records.len() {
        return Err(Error::MismatchedGrid(format!(
            "{} real records vs {} ideal records",
            real.records.len(),
            ideal.records.len()
        )));
    }
    let metric = if real.records[0].test_soft_error.is_some() { GapMetric::SoftError } else { GapMetric::Error };
    let mut eps_series = Vec::with_capacity(real.records.len());
    for (r, i) in real.records.iter().zip(&ideal.records) {
        if r.step != i.step {
            return Err(Error::MismatchedGrid(format!("real step {} paired with ideal step {}", r.step, i.step)));
        }
        eps_series.push(EpsPoint { step: r.step, eps: r.test_gap_metric() - i.test_gap_metric() });
    }

    let t0 = crate::worlds::stopping_time(real, stop_threshold);
    let t0_effective = t0.unwrap_or(real.records.last().expect("non-empty").step);
    let at = real.records.iter().position(|r| r.step == t0_effective).expect("t0 is a recorded step");
    let max_abs_eps_pre_t0 =
        eps_series.iter().take_while(|p| p.step <= t0_effective).map(|p| p.eps.abs()).fold(0.0, f64::max);
    let rec = &real.records[at];
    Ok(BootstrapReport {
        metric,
        t0,
        t0_effective,
        eps_at_t0: eps_series[at].eps,
        abs_eps_at_t0: eps_series[at].eps.abs(),
        max_abs_eps_pre_t0,
        gen_gap_at_t0: rec.test_gap_metric() - rec.train_gap_metric(),
        eps_series,
    })
}
