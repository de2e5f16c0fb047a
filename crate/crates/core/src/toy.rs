//! High-dimensional linear regression toy: full-batch GD on a finite sample
//! (Real World) against GD on the population loss (Ideal World).
//!
//! Data: `x ~ N(0, V)` with `V` diagonal, `y = σ(⟨β*, x⟩)` for `σ ∈ {id, sgn}`,
//! model `f_β(x) = ⟨β, x⟩`, both worlds start at `β = 0`.

use serde::{Deserialize, Serialize};

use crate::distributions::{draw_trainset, make_gaussian_linear, GaussianLinear, LabelEncoding, LinkActivation, Oracle};
use crate::error::{Error, Result};
use crate::nn::{dot, Labels, Matrix};
use crate::rng::{self, Purpose};

/// `E|z|` for `z ~ N(0, 1)`, i.e. `√(2/π)`.
pub fn sign_correlation() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// How test MSE is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyEval {
    /// Closed-form population MSE.
    Exact,
    /// Average over a fixed evaluation set drawn once per seed. Costs
    /// `samples · d` per step and world.
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySetting {
    pub activation: LinkActivation,
    pub n: usize,
    pub d: usize,
    pub eta: f64,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub eval: ToyEval,
}

pub const DEFAULT_D: usize = 1000;
pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_STEPS: usize = 500;

impl ToySetting {
    /// Well-specified: identity link, 20 samples.
    pub fn setting_a() -> Self {
        Self {
            activation: LinkActivation::Identity,
            n: 20,
            d: DEFAULT_D,
            eta: DEFAULT_ETA,
            steps: DEFAULT_STEPS,
            seeds: (0..20).collect(),
            eval: ToyEval::Exact,
        }
    }

    /// Misspecified: sign link, 100 samples.
    pub fn setting_b() -> Self {
        Self { activation: LinkActivation::Sign, n: 100, ..Self::setting_a() }
    }

    pub fn oracle(&self) -> Result<GaussianLinear> {
        match make_gaussian_linear(self.d, self.activation, LabelEncoding::Real)? {
            Oracle::GaussianLinear(g) => Ok(g),
            _ => unreachable!(),
        }
    }

    /// Population GD is only guaranteed stable when `2ηλ_max < 1`.
    pub fn is_unstable(&self) -> bool {
        // λ_max of the default covariance is 1
        2.0 * self.eta * 1.0 >= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.steps == 0 || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("toy run needs n, steps and at least one seed".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if let ToyEval::MonteCarlo { samples: 0 } = self.eval {
            return Err(Error::InvalidConfig("Monte Carlo evaluation needs samples".into()));
        }
        Ok(())
    }
}

/// `β − η·(2/n)·Xᵀ(Xβ − y)`.
pub fn toy_real_step(beta: &[f64], x: &Matrix, y: &[f64], eta: f64) -> Vec<f64> {
    let n = x.rows() as f64;
    let mut next = beta.to_vec();
    for r in 0..x.rows() {
        let row = x.row(r);
        let resid = dot(row, beta) - y[r];
        crate::nn::axpy(-eta * 2.0 / n * resid, row, &mut next);
    }
    next
}

/// `E[x·y]` under the oracle: `Vβ*` for the identity link and
/// `√(2/π)·Vβ*/√(β*ᵀVβ*)` for the sign link.
pub fn population_cross_moment(oracle: &GaussianLinear) -> Vec<f64> {
    let v_beta: Vec<f64> = oracle.cov_eigs.iter().zip(&oracle.beta_star).map(|(e, b)| e * b).collect();
    match oracle.activation {
        LinkActivation::Identity => v_beta,
        LinkActivation::Sign => {
            let scale = sign_correlation() / dot(&oracle.beta_star, &v_beta).sqrt();
            v_beta.into_iter().map(|v| v * scale).collect()
        }
    }
}

/// One GD step on the population loss: `β − 2η(Vβ − E[xy])`.
///
/// With `β* = e₁`, identity gives `β − 2ηV(β − β*)` and sign gives
/// `β − 2η(Vβ − √(2/π)·e₁)`.
pub fn toy_ideal_step(beta: &[f64], oracle: &GaussianLinear, eta: f64) -> Vec<f64> {
    let cross = population_cross_moment(oracle);
    beta.iter()
        .zip(&oracle.cov_eigs)
        .zip(&cross)
        .map(|((b, e), c)| b - 2.0 * eta * (e * b - c))
        .collect()
}

/// `E[(⟨β, x⟩ − y)²]`: `(β − β*)ᵀV(β − β*)` for the identity link and
/// `βᵀVβ − 2βᵀE[xy] + 1` for the sign link.
pub fn population_mse(beta: &[f64], oracle: &GaussianLinear) -> f64 {
    match oracle.activation {
        LinkActivation::Identity => beta
            .iter()
            .zip(&oracle.beta_star)
            .zip(&oracle.cov_eigs)
            .map(|((b, s), e)| e * (b - s) * (b - s))
            .sum(),
        LinkActivation::Sign => {
            let quad: f64 = beta.iter().zip(&oracle.cov_eigs).map(|(b, e)| e * b * b).sum();
            quad - 2.0 * dot(beta, &population_cross_moment(oracle)) + 1.0
        }
    }
}

fn empirical_mse(beta: &[f64], x: &Matrix, y: &[f64]) -> f64 {
    (0..x.rows()).map(|r| (dot(x.row(r), beta) - y[r]).powi(2)).sum::<f64>() / x.rows() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurves {
    pub seed: u64,
    pub real_train_mse: Vec<f64>,
    pub real_test_mse: Vec<f64>,
    pub ideal_test_mse: Vec<f64>,
}

impl SeedCurves {
    pub fn bootstrap_gap(&self, t: usize) -> f64 {
        (self.real_test_mse[t] - self.ideal_test_mse[t]).abs()
    }

    pub fn generalization_gap(&self, t: usize) -> f64 {
        self.real_test_mse[t] - self.real_train_mse[t]
    }
}

/// Curves indexed by step `0..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCurves {
    pub setting: ToySetting,
    pub per_seed: Vec<SeedCurves>,
    pub median_real_train_mse: Vec<f64>,
    pub median_real_test_mse: Vec<f64>,
    pub median_ideal_test_mse: Vec<f64>,
}

/// Per-seed terminal gaps, reduced by median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub median_bootstrap_gap: f64,
    pub median_generalization_gap: f64,
    pub median_max_bootstrap_gap: f64,
}

impl ToyCurves {
    pub fn terminal_summary(&self) -> ToySummary {
        let t = self.setting.steps;
        let boot: Vec<f64> = self.per_seed.iter().map(|s| s.bootstrap_gap(t)).collect();
        let gen: Vec<f64> = self.per_seed.iter().map(|s| s.generalization_gap(t)).collect();
        let max_boot: Vec<f64> =
            self.per_seed.iter().map(|s| (0..=t).map(|i| s.bootstrap_gap(i)).fold(0.0, f64::max)).collect();
        ToySummary {
            median_bootstrap_gap: median(&boot),
            median_generalization_gap: median(&gen),
            median_max_bootstrap_gap: median(&max_boot),
        }
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Ideal-World trajectory from `β = 0`. Independent of the seed.
pub fn ideal_trajectory(oracle: &GaussianLinear, eta: f64, steps: usize) -> Vec<Vec<f64>> {
    let mut betas = Vec::with_capacity(steps + 1);
    betas.push(vec![0.0; oracle.dim()]);
    for t in 0..steps {
        let next = toy_ideal_step(&betas[t], oracle, eta);
        betas.push(next);
    }
    betas
}

/// Exact population TestMSE along the Ideal-World trajectory.
///
/// For the identity link the residual `δ = β − β*` is evolved directly by
/// `δ ← δ − 2ηVδ`; recovering it as `β − β*` would cancel away its low bits
/// once β is close to β*.
pub fn ideal_test_mse(oracle: &GaussianLinear, eta: f64, steps: usize) -> Vec<f64> {
    match oracle.activation {
        LinkActivation::Identity => {
            let mut delta: Vec<f64> = oracle.beta_star.iter().map(|s| -s).collect();
            let mut out = Vec::with_capacity(steps + 1);
            for t in 0..=steps {
                out.push(delta.iter().zip(&oracle.cov_eigs).map(|(d, e)| e * d * d).sum());
                if t < steps {
                    for (d, e) in delta.iter_mut().zip(&oracle.cov_eigs) {
                        *d -= 2.0 * eta * e * *d;
                    }
                }
            }
            out
        }
        LinkActivation::Sign => {
            ideal_trajectory(oracle, eta, steps).iter().map(|b| population_mse(b, oracle)).collect()
        }
    }
}

/// The seed-independent Ideal World: parameters per step and their exact
/// population TestMSE.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealCurve {
    pub betas: Vec<Vec<f64>>,
    pub test_mse: Vec<f64>,
}

impl IdealCurve {
    pub fn new(oracle: &GaussianLinear, eta: f64, steps: usize) -> Self {
        Self { betas: ideal_trajectory(oracle, eta, steps), test_mse: ideal_test_mse(oracle, eta, steps) }
    }
}

/// Run one seed of both worlds.
pub fn run_toy_seed(setting: &ToySetting, oracle: &GaussianLinear, ideal: &IdealCurve, seed: u64) -> Result<SeedCurves> {
    let population = Oracle::GaussianLinear(oracle.clone());
    let train = draw_trainset(&population, setting.n, rng::derive_seed(seed, Purpose::ToyTrainSet, 0))?;
    let Labels::Targets(y) = &train.data.labels else { unreachable!("real encoding") };
    let x = &train.data.inputs;

    let eval_set = match setting.eval {
        ToyEval::Exact => None,
        ToyEval::MonteCarlo { samples } => {
            let b = population.sample(&mut rng::stream(seed, Purpose::ToyEval, 0), samples);
            let Labels::Targets(t) = b.labels else { unreachable!() };
            Some((b.inputs, t))
        }
    };
    let test_mse = |beta: &[f64]| match &eval_set {
        None => population_mse(beta, oracle),
        Some((ex, ey)) => empirical_mse(beta, ex, ey),
    };

    let mut beta = vec![0.0; setting.d];
    let mut curves = SeedCurves {
        seed,
        real_train_mse: Vec::with_capacity(setting.steps + 1),
        real_test_mse: Vec::with_capacity(setting.steps + 1),
        ideal_test_mse: match &eval_set {
            None => ideal.test_mse.clone(),
            Some(_) => ideal.betas.iter().map(|b| test_mse(b)).collect(),
        },
    };
    for t in 0..=setting.steps {
        let train_mse = empirical_mse(&beta, x, y);
        if !train_mse.is_finite() {
            return Err(Error::NonFiniteGradient { step: t });
        }
        curves.real_train_mse.push(train_mse);
        curves.real_test_mse.push(test_mse(&beta));
        if t < setting.steps {
            beta = toy_real_step(&beta, x, y, setting.eta);
        }
    }
    Ok(curves)
}

/// Both worlds for every seed, plus per-step medians across seeds.
pub fn run_toy(setting: &ToySetting) -> Result<ToyCurves> {
    setting.validate()?;
    if setting.is_unstable() {
        return Err(Error::InvalidConfig(format!(
            "step size {} is unstable: 2·eta·lambda_max = {} >= 1",
            setting.eta,
            2.0 * setting.eta
        )));
    }
    let oracle = setting.oracle()?;
    let ideal = IdealCurve::new(&oracle, setting.eta, setting.steps);
    let per_seed =
        setting.seeds.iter().map(|&s| run_toy_seed(setting, &oracle, &ideal, s)).collect::<Result<Vec<_>>>()?;
    let med = |f: fn(&SeedCurves) -> &Vec<f64>| -> Vec<f64> {
        (0..=setting.steps).map(|t| median(&per_seed.iter().map(|s| f(s)[t]).collect::<Vec<_>>())).collect()
    };
    Ok(ToyCurves {
        median_real_train_mse: med(|s| &s.real_train_mse),
        median_real_test_mse: med(|s| &s.real_test_mse),
        median_ideal_test_mse: med(|s| &s.ideal_test_mse),
        per_seed,
        setting: setting.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{loss_and_grad, Head, Layer, ModelParams, ModelSpec};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn identity_oracle(d: usize) -> GaussianLinear {
        ToySetting { d, ..ToySetting::setting_a() }.oracle().unwrap()
    }

    #[test]
    fn real_step_by_hand() {
        let mut row = vec![0.0; 12];
        row[0] = 1.0;
        let x = Matrix::from_rows(&[row]).unwrap();
        let next = toy_real_step(&[0.0; 12], &x, &[1.0], 0.1);
        assert!((next[0] - 0.2).abs() < 1e-15);
        assert!(next[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normal_equation_solution_is_fixed() {
        // square invertible X: β = X⁻¹y solves the normal equations
        let x = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let y = [4.0, 3.0];
        let beta = [2.0, 1.0];
        assert_eq!(toy_real_step(&beta, &x, &y, 0.1), beta.to_vec());
    }

    #[test]
    fn real_step_matches_nn_gradient_update() {
        let o = identity_oracle(40);
        let train = draw_trainset(&Oracle::GaussianLinear(o.clone()), 15, 2).unwrap();
        let Labels::Targets(y) = &train.data.labels else { panic!() };
        let spec = ModelSpec::linear(40, Head::Mse { outputs: 1 }).without_bias();
        let mut beta: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 0.1).collect();
        for _ in 0..10 {
            let w = Matrix::new(1, 40, beta.clone()).unwrap();
            let p = ModelParams::from_layers(&spec, vec![Layer { weights: w, bias: vec![0.0] }]).unwrap();
            let (_, g) = loss_and_grad(&p, &train.data.inputs, &train.data.labels).unwrap();
            let via_nn: Vec<f64> = beta.iter().zip(g.layers[0].weights.data()).map(|(b, g)| b - 0.1 * g).collect();
            let direct = toy_real_step(&beta, &train.data.inputs, y, 0.1);
            for (a, b) in via_nn.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
            beta = direct;
        }
    }

    #[test]
    fn ideal_identity_fixed_point_and_first_step() {
        let o = identity_oracle(DEFAULT_D);
        assert_eq!(toy_ideal_step(&o.beta_star, &o, 0.1), o.beta_star);
        let b1 = toy_ideal_step(&vec![0.0; DEFAULT_D], &o, 0.1);
        // coordinate-1 residual 0.8 → TestMSE 0.64
        assert!((population_mse(&b1, &o) - 0.64).abs() < 1e-15);
        assert_eq!(population_mse(&vec![0.0; DEFAULT_D], &o), 1.0);
    }

    #[test]
    fn residual_form_agrees_with_parameter_form() {
        let o = identity_oracle(50);
        let curve = IdealCurve::new(&o, 0.1, 40);
        for (beta, &exact) in curve.betas.iter().zip(&curve.test_mse) {
            assert!((population_mse(beta, &o) - exact).abs() < 1e-14);
        }
        // sign link has no cancellation issue and reuses the parameter form
        let s = ToySetting { d: 50, ..ToySetting::setting_b() }.oracle().unwrap();
        let curve = IdealCurve::new(&s, 0.1, 10);
        assert_eq!(curve.test_mse[10], population_mse(&curve.betas[10], &s));
    }

    #[test]
    fn ideal_identity_matches_per_coordinate_closed_form() {
        let o = identity_oracle(50);
        let traj = ideal_trajectory(&o, 0.1, 60);
        for (t, b) in traj.iter().enumerate() {
            for (j, v) in b.iter().enumerate() {
                let closed = o.beta_star[j] * (1.0 - (1.0 - 2.0 * 0.1 * o.cov_eigs[j]).powi(t as i32));
                assert!((v - closed).abs() <= 1e-10 * closed.abs().max(1e-300), "t={t} j={j}");
            }
        }
    }

    #[test]
    fn sign_constant_matches_monte_carlo() {
        // E[x₁ sgn(x₁)] over 10⁶ standard normal draws
        let mut rng = rng::stream(42, Purpose::ToyEval, 99);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let v = z * z.signum();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let sd = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - sign_correlation()).abs() < 3.0 * sd, "{mean} vs {}", sign_correlation());
    }

    #[test]
    fn sign_population_fixed_point() {
        let o = ToySetting { d: 30, ..ToySetting::setting_b() }.oracle().unwrap();
        let mut fixed = vec![0.0; 30];
        fixed[0] = sign_correlation();
        let next = toy_ideal_step(&fixed, &o, 0.1);
        for (a, b) in next.iter().zip(&fixed) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((population_mse(&fixed, &o) - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_eval_agrees_with_closed_form() {
        for activation in [LinkActivation::Identity, LinkActivation::Sign] {
            let base = ToySetting { activation, d: 30, n: 10, steps: 20, seeds: vec![1], ..ToySetting::setting_a() };
            let exact = run_toy(&base).unwrap();
            let mc = run_toy(&ToySetting { eval: ToyEval::MonteCarlo { samples: 200_000 }, ..base }).unwrap();
            for (a, b) in exact.per_seed[0].real_test_mse.iter().zip(&mc.per_seed[0].real_test_mse) {
                assert!((a - b).abs() < 0.03 * a.max(0.1), "{activation:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn unstable_eta_is_refused() {
        let s = ToySetting { eta: 3.0, ..ToySetting::setting_a() };
        assert!(s.is_unstable());
        assert!(run_toy(&s).is_err());
        assert!(!ToySetting::setting_a().is_unstable());
    }

    #[test]
    fn curves_start_equal_and_nonnegative() {
        let c = run_toy(&ToySetting { steps: 30, seeds: vec![0, 1, 2], ..ToySetting::setting_b() }).unwrap();
        for s in &c.per_seed {
            assert_eq!(s.real_test_mse[0], s.ideal_test_mse[0]);
            assert!(s.real_train_mse.iter().chain(&s.real_test_mse).chain(&s.ideal_test_mse).all(|&v| v >= 0.0));
        }
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
