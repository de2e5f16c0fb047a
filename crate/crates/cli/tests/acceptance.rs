//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so criteria execute in order and
//! their lines are always printed. Pass criterion numbers to run a subset:
//! `cargo test --release --test acceptance -- 1 7`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dboot::config::{emit_config, load_config, parse_config};
use dboot::report::generate_report;
use dboot::runner::{run_experiment, RunOptions};
use dboot_core::distributions::{
    draw_trainset, make_gaussian_linear, make_teacher_task, Augmentation, Generator, LabelEncoding, LinkActivation,
    Oracle,
};
use dboot_core::nn::{init_params, loss, loss_and_grad, Activation, Head, Labels, Matrix, ModelParams, ModelSpec};
use dboot_core::optimizers::{OptimizerKind, OptimizerSpec, Schedule};
use dboot_core::rng::{self, Purpose};
use dboot_core::toy::{ideal_trajectory, median, population_mse, run_toy, ToySetting};
use dboot_core::worlds::{
    evaluate_g, generate_sequence, run_coupled, run_coupled_on, train_world_on, CoupledReport, SequenceMode,
    WorldConfig, DEFAULT_STOP_THRESHOLD,
};
use rand::Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sgd(lr: f64, batch_size: usize) -> OptimizerSpec {
    OptimizerSpec {
        kind: OptimizerKind::Sgd { momentum: 0.9 },
        base_lr: lr,
        schedule: Schedule::Cosine { total_steps: None },
        batch_size,
    }
}

fn default_teacher() -> Oracle {
    let teacher = ModelSpec::mlp(64, vec![256], Activation::Relu, Head::SoftmaxXent { classes: 2 });
    make_teacher_task(Generator::Gaussian, &teacher, 0).unwrap()
}

fn student() -> ModelSpec {
    ModelSpec::mlp(64, vec![64], Activation::Relu, Head::SoftmaxXent { classes: 2 })
}

fn eps_zero_at_start(c: &CoupledReport) -> bool {
    c.report.as_ref().is_some_and(|r| r.eps_series[0].step == 0 && r.eps_series[0].eps == 0.0)
}

/// Setting B has a smaller terminal bootstrap gap than Setting A, and its
/// generalization gap is at least twice its bootstrap gap.
fn toy_contrast() -> Outcome {
    let start = Instant::now();
    let a = run_toy(&ToySetting::setting_a()).map_err(|e| e.to_string())?.terminal_summary();
    let b = run_toy(&ToySetting::setting_b()).map_err(|e| e.to_string())?.terminal_summary();
    let elapsed = start.elapsed();
    let ordering = b.median_bootstrap_gap < a.median_bootstrap_gap;
    let ratio = b.median_generalization_gap / b.median_bootstrap_gap;
    check(
        ordering && ratio >= 2.0 && elapsed < Duration::from_secs(120),
        format!(
            "boot gap A {:.4} > B {:.4}; B gen gap {:.4} = {ratio:.2}x boot gap (need >= 2); {:.1}s (20 seeds, 500 steps)",
            a.median_bootstrap_gap,
            b.median_bootstrap_gap,
            b.median_generalization_gap,
            elapsed.as_secs_f64()
        ),
    )
}

/// Ideal World of Setting A from β = 0: TestMSE(t) = 0.8^(2t).
fn closed_form_ideal() -> Outcome {
    let setting = ToySetting { steps: 100, seeds: vec![0, 1], ..ToySetting::setting_a() };
    let curves = run_toy(&setting).map_err(|e| e.to_string())?;
    let oracle = setting.oracle().map_err(|e| e.to_string())?;
    let betas = ideal_trajectory(&oracle, setting.eta, 100);
    let mut worst: f64 = 0.0;
    // recovering the residual as β − β* is limited by the ulp of β near β*
    let mut worst_param_form: f64 = 0.0;
    for t in 0..=100 {
        // residual on coordinate 1 shrinks by (1 - 2·η·λ₁) = 0.8 per step
        let expected = 0.64f64.powi(t as i32);
        for s in &curves.per_seed {
            worst = worst.max((s.ideal_test_mse[t] - expected).abs() / expected);
        }
        worst_param_form = worst_param_form.max((population_mse(&betas[t], &oracle) - expected).abs() / expected);
    }
    check(
        curves.per_seed.iter().all(|s| s.ideal_test_mse.len() == 101) && worst < 1e-10,
        format!(
            "max relative error {worst:.2e} over t = 0..100 (need < 1e-10); via (beta - beta*): {worst_param_form:.1e}"
        ),
    )
}

/// Central differences written here, independent of the library's checker.
fn fd_max_rel_error(params: &ModelParams, x: &Matrix, labels: &Labels, coords: usize, seed: u64) -> f64 {
    let (_, grads) = loss_and_grad(params, x, labels).unwrap();
    let analytic: Vec<f64> = grads.blocks().flat_map(|b| b.iter().copied()).collect();
    let total = analytic.len();
    let mut r = rng::stream(seed, Purpose::GradCheck, 99);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let k = r.random_range(0..total);
        let eval_at = |delta: f64| {
            let mut p = params.clone();
            let mut idx = k;
            for block in p.blocks_mut() {
                if idx < block.len() {
                    block[idx] += delta;
                    break;
                }
                idx -= block.len();
            }
            loss(&p, x, labels).unwrap()
        };
        let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
        let a = analytic[k];
        worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-4));
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let cases = [
        ("linear/softmax", ModelSpec::linear(40, Head::SoftmaxXent { classes: 3 })),
        ("linear/mse", ModelSpec::linear(40, Head::Mse { outputs: 3 })),
        ("mlp/softmax", ModelSpec::mlp(12, vec![16, 8], Activation::Relu, Head::SoftmaxXent { classes: 3 })),
        ("mlp/mse", ModelSpec::mlp(12, vec![16, 8], Activation::Relu, Head::Mse { outputs: 2 })),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, spec) in cases {
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let params = init_params(&spec, seed).unwrap();
            let mut r = rng::stream(seed, Purpose::TrainSet, 7);
            let rows = 10;
            let x = Matrix::new(rows, spec.input_dim, (0..rows * spec.input_dim).map(|_| r.random_range(-2.0..2.0)).collect())
                .unwrap();
            let labels = match spec.head {
                Head::SoftmaxXent { classes } => Labels::Classes((0..rows).map(|_| r.random_range(0..classes)).collect()),
                Head::Mse { outputs } => Labels::Targets((0..rows * outputs).map(|_| r.random_range(-1.0..1.0)).collect()),
            };
            worst = worst.max(fd_max_rel_error(&params, &x, &labels, 128, seed));
        }
        ok &= worst < 1e-5;
        details.push(format!("{name} {worst:.1e}"));
    }
    check(ok, format!("max rel error (128 coords x 5 seeds, need < 1e-5): {}", details.join(", ")))
}

/// ε(0) = 0 across heads, oracles, optimizers, schedules, and augmentations.
fn coupling_soundness() -> Outcome {
    let teacher = Arc::new(make_teacher_task(
        Generator::Gaussian,
        &ModelSpec::mlp(10, vec![16], Activation::Relu, Head::SoftmaxXent { classes: 3 }),
        1,
    )
    .unwrap());
    let linear = Arc::new(make_gaussian_linear(20, LinkActivation::Identity, LabelEncoding::Real).unwrap());
    let sign = Arc::new(make_gaussian_linear(20, LinkActivation::Sign, LabelEncoding::SignClasses).unwrap());
    let random = Arc::new(Oracle::random_label((*teacher).clone(), 5).unwrap());
    let pool = Arc::new(Oracle::pool_backed(Arc::new(draw_trainset(&teacher, 80, 3).unwrap())).unwrap());
    let mixture = Arc::new(make_teacher_task(
        Generator::mixture(10, 4, 2.0, 5).unwrap(),
        &ModelSpec::mlp(10, vec![8], Activation::Relu, Head::SoftmaxXent { classes: 2 }),
        2,
    )
    .unwrap());
    let mlp = |d, head| ModelSpec::mlp(d, vec![12], Activation::Relu, head);
    let cases: Vec<(&str, Arc<Oracle>, ModelSpec, OptimizerKind, Schedule, Augmentation)> = vec![
        ("teacher/mlp/sgd", teacher.clone(), mlp(10, Head::SoftmaxXent { classes: 3 }), OptimizerKind::Sgd { momentum: 0.9 }, Schedule::Cosine { total_steps: None }, Augmentation::None),
        ("teacher/linear/adam/noise", teacher.clone(), ModelSpec::linear(10, Head::SoftmaxXent { classes: 3 }), OptimizerKind::adam_default(), Schedule::Constant, Augmentation::GaussianNoise { sigma: 0.2 }),
        ("teacher/mlp-mse/gd/dropout", teacher.clone(), mlp(10, Head::Mse { outputs: 3 }), OptimizerKind::Gd, Schedule::StepDrop { drop_factor: 0.1, milestones: vec![1.0 / 3.0, 2.0 / 3.0] }, Augmentation::CoordDropout { p: 0.2 }),
        ("linear-regression/mse", linear, ModelSpec::linear(20, Head::Mse { outputs: 1 }).without_bias(), OptimizerKind::Gd, Schedule::Constant, Augmentation::None),
        ("sign-classes/mlp", sign, mlp(20, Head::SoftmaxXent { classes: 2 }), OptimizerKind::Sgd { momentum: 0.0 }, Schedule::Cosine { total_steps: None }, Augmentation::None),
        ("random-label/mlp", random, mlp(10, Head::SoftmaxXent { classes: 5 }), OptimizerKind::Sgd { momentum: 0.9 }, Schedule::Constant, Augmentation::None),
        ("pool-backed/mlp", pool, mlp(10, Head::SoftmaxXent { classes: 3 }), OptimizerKind::Sgd { momentum: 0.9 }, Schedule::Cosine { total_steps: None }, Augmentation::GaussianNoise { sigma: 0.1 }),
        ("mixture/mlp", mixture, mlp(10, Head::SoftmaxXent { classes: 2 }), OptimizerKind::adam_default(), Schedule::Cosine { total_steps: None }, Augmentation::None),
    ];
    let mut runs = 0;
    let mut failures = Vec::new();
    for (name, oracle, model, kind, schedule, augmentation) in cases {
        for seed in 0..3 {
            for total_steps in [0, 25] {
                let cfg = WorldConfig {
                    oracle: oracle.clone(),
                    n: 60,
                    model: model.clone(),
                    optimizer: OptimizerSpec { kind, base_lr: 0.01, schedule: schedule.clone(), batch_size: 10 },
                    total_steps,
                    augmentation,
                    master_seed: seed,
                    eval_every: 5,
                    eval_samples: 400,
                    stop_threshold: DEFAULT_STOP_THRESHOLD,
                };
                let c = run_coupled(&cfg).map_err(|e| format!("{name}: {e}"))?;
                runs += 1;
                if !eps_zero_at_start(&c) || c.real.records[0] != c.ideal.records[0].clone().with_train_of(&c.real.records[0]) {
                    failures.push(format!("{name} seed {seed} steps {total_steps}"));
                }
            }
        }
    }
    check(failures.is_empty(), format!("eps(0) == 0 exactly in {}/{runs} coupled runs {}", runs - failures.len(), failures.join(", ")))
}

trait WithTrain {
    fn with_train_of(self, other: &dboot_core::metrics::MetricsRecord) -> Self;
}

impl WithTrain for dboot_core::metrics::MetricsRecord {
    /// Step-0 test metrics must coincide; train metrics legitimately differ
    /// (train set vs held-out probe).
    fn with_train_of(mut self, other: &dboot_core::metrics::MetricsRecord) -> Self {
        self.train_error = other.train_error;
        self.train_soft_error = other.train_soft_error;
        self
    }
}

/// Uniform labels over 10 classes: both worlds end at soft-error 0.9 ± 0.02.
fn random_label_chance() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let mut cfg = load_config(&configs_dir().join("random_labels.toml")).map_err(|e| e.to_string())?;
    cfg.seeds = vec![0, 1, 2];
    let out = run_experiment(&cfg, &RunOptions { output_dir: Some(tmp.path().into()), quiet: true, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let mut finals = Vec::new();
    let mut ok = true;
    for job in &out.jobs {
        ok &= eps_zero_at_start(&job.coupled);
        for traj in [&job.coupled.real, &job.coupled.ideal] {
            let v = traj.last().and_then(|r| r.test_soft_error).unwrap_or(f64::NAN);
            ok &= (v - 0.9).abs() <= 0.02;
            finals.push(format!("{v:.4}"));
        }
    }
    check(ok, format!("final test soft-error (real, ideal) per seed, m = 10000: [{}]", finals.join(", ")))
}

/// Pool-backed oracle on the Real World's own train set: both worlds sample
/// the same finite population, so |ε(t)| stays within 3 binomial SE.
fn self_coupling_null() -> Outcome {
    let base = default_teacher();
    let n = 1000;
    // the population is the n-point pool, so the evaluation uses m = n draws
    let m = n;
    let mut worst_ratios = Vec::new();
    let mut ok = true;
    for seed in 0..5u64 {
        let set = Arc::new(draw_trainset(&base, n, 1000 + seed).unwrap());
        let cfg = WorldConfig {
            oracle: Arc::new(Oracle::pool_backed(set.clone()).unwrap()),
            n,
            model: student(),
            optimizer: sgd(0.05, 128),
            total_steps: 1000,
            augmentation: Augmentation::None,
            master_seed: seed,
            eval_every: 50,
            eval_samples: m,
            stop_threshold: DEFAULT_STOP_THRESHOLD,
        };
        let c = run_coupled_on(&cfg, set).map_err(|e| e.to_string())?;
        ok &= eps_zero_at_start(&c);
        let mut worst: f64 = 0.0;
        for (r, i) in c.real.records.iter().zip(&c.ideal.records) {
            let (a, b) = (r.test_soft_error.unwrap(), i.test_soft_error.unwrap());
            let p = 0.5 * (a + b);
            let sigma = (p * (1.0 - p) / m as f64).sqrt();
            worst = worst.max((a - b).abs() / sigma);
        }
        ok &= worst < 3.0;
        worst_ratios.push(format!("{worst:.2}"));
    }
    check(ok, format!("worst |eps|/sigma per seed (m = n = {n}, 21 eval steps): [{}] (need < 3)", worst_ratios.join(", ")))
}

/// Default teacher task sweep over n: median T0 nondecreasing, median
/// max |ε(t ≤ T0)| nonincreasing.
fn sample_size_trends() -> Outcome {
    let start = Instant::now();
    let tmp = TempDir::new().unwrap();
    let cfg = load_config(&configs_dir().join("teacher_n_sweep.toml")).map_err(|e| e.to_string())?;
    let out = run_experiment(&cfg, &RunOptions { output_dir: Some(tmp.path().into()), quiet: true, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut by_n: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut eps0 = true;
    for job in &out.jobs {
        eps0 &= eps_zero_at_start(&job.coupled);
        let report = job.report.as_ref().ok_or("aborted run")?;
        let n = cfg.expand()[job.point_index].config.training.n;
        let entry = by_n.entry(n).or_default();
        entry.0.push(report.t0_effective as f64);
        entry.1.push(report.max_abs_eps_pre_t0);
    }
    let seeds = by_n.values().map(|v| v.0.len()).min().unwrap_or(0);
    let t0: Vec<f64> = by_n.values().map(|v| median(&v.0)).collect();
    let eps: Vec<f64> = by_n.values().map(|v| median(&v.1)).collect();
    let t0_ok = t0.windows(2).all(|w| w[0] <= w[1]);
    let eps_ok = eps.windows(2).all(|w| w[0] >= w[1]);
    let ns: Vec<String> = by_n.keys().map(|n| n.to_string()).collect();
    check(
        eps0 && seeds >= 10 && by_n.len() == 3 && t0_ok && eps_ok && elapsed < Duration::from_secs(600),
        format!(
            "n = [{}]: median T0 {:?} (nondecreasing: {t0_ok}), median max|eps| [{}] (nonincreasing: {eps_ok}); {seeds} seeds, {:.0}s",
            ns.join(", "),
            t0,
            eps.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

/// evaluate_G on generated sequences reproduces the iid and with-replacement
/// worlds bit for bit.
fn g_equivalence() -> Outcome {
    let oracle = Arc::new(default_teacher());
    let mut checked = 0;
    for seed in 0..4 {
        let cfg = WorldConfig {
            oracle: oracle.clone(),
            n: 500,
            model: student(),
            optimizer: sgd(0.05, 32),
            total_steps: 60,
            augmentation: Augmentation::GaussianNoise { sigma: 0.1 },
            master_seed: seed,
            eval_every: 20,
            eval_samples: 2000,
            stop_threshold: DEFAULT_STOP_THRESHOLD,
        };
        let eval = cfg.draw_eval_set();
        let set = Arc::new(cfg.draw_trainset().unwrap());
        for mode in [SequenceMode::Iid, SequenceMode::WithReplacement(set)] {
            let world = train_world_on(&cfg, &mode, &eval).map_err(|e| e.to_string())?;
            let seq = generate_sequence(&cfg, &mode).map_err(|e| e.to_string())?;
            let g = evaluate_g(&cfg.model, &cfg.optimizer, cfg.init_seed(), &seq, &eval).map_err(|e| e.to_string())?;
            let w = world.last().unwrap().test_soft_error.unwrap();
            if g.to_bits() != w.to_bits() {
                return Err(format!("seed {seed} {}: G = {g} vs world {w}", mode.tag()));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} (seed, mode) pairs bit-identical for iid and with_replacement"))
}

/// Byte-identical reruns, config round trip, idempotent report.
fn determinism_and_round_trip() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let mut cfg = load_config(&configs_dir().join("quick.toml")).map_err(|e| e.to_string())?;
    cfg.training.total_steps = 100;
    let run = |dir: &str, jobs| {
        run_experiment(&cfg, &RunOptions { jobs: Some(jobs), output_dir: Some(tmp.path().join(dir)), quiet: true, ..Default::default() })
    };
    run("a", 1).map_err(|e| e.to_string())?;
    run("b", 2).map_err(|e| e.to_string())?;
    let (a, b) = (snapshot(&tmp.path().join("a")), snapshot(&tmp.path().join("b")));
    let records = a.keys().filter(|p| p.extension().is_some_and(|e| e == "jsonl")).count();
    let identical = a == b && records == 16;

    let mut round_trips = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = load_config(&path).map_err(|e| e.to_string())?;
            if parse_config(&emit_config(&c).map_err(|e| e.to_string())?).map_err(|e| e.to_string())? != c {
                return Err(format!("{} does not round-trip", path.display()));
            }
            round_trips += 1;
        }
    }

    generate_report(&tmp.path().join("a")).map_err(|e| e.to_string())?;
    let first = snapshot(&tmp.path().join("a/report"));
    generate_report(&tmp.path().join("a")).map_err(|e| e.to_string())?;
    let idempotent = first == snapshot(&tmp.path().join("a/report")) && !first.is_empty();
    check(
        identical && round_trips >= 3 && idempotent,
        format!(
            "{records} record files byte-identical across reruns: {}; {round_trips} configs round-trip; report idempotent over {} files: {idempotent}",
            a == b,
            first.len()
        ),
    )
}

fn snapshot(root: &Path) -> BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn schedule_values() -> Outcome {
    let total = 900;
    let cosine = Schedule::Cosine { total_steps: None };
    let mid = cosine.lr_at(0.1, total / 2, total).map_err(|e| e.to_string())?;
    let drop = Schedule::StepDrop { drop_factor: 0.1, milestones: vec![1.0 / 3.0, 2.0 / 3.0] };
    let phase = |step| drop.lr_at(0.1, step, total).unwrap();
    let phases = [(0, 0.1), (299, 0.1), (300, 0.01), (450, 0.01), (599, 0.01), (600, 0.001), (899, 0.001)];
    let drops_ok = phases.iter().all(|&(s, want)| (phase(s) - want).abs() <= 1e-15);
    let end = cosine.lr_at(0.1, total, total).map_err(|e| e.to_string())?;
    check(
        (mid - 0.05).abs() <= 1e-15 && drops_ok && end.abs() < 1e-15,
        format!(
            "cosine lr(T/2) = {mid} (base 0.1), lr(T) = {end:.1e}; step-drop phases {:?}",
            phases.iter().map(|&(s, _)| phase(s)).collect::<Vec<_>>()
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "toy Setting A/B contrast", toy_contrast),
        (2, "closed-form Ideal World 0.8^(2t)", closed_form_ideal),
        (3, "gradient correctness", gradient_correctness),
        (4, "coupling soundness eps(0) = 0", coupling_soundness),
        (5, "random-label chance level", random_label_chance),
        (6, "self-coupling null", self_coupling_null),
        (7, "sample-size trends", sample_size_trends),
        (8, "G-function equivalence", g_equivalence),
        (9, "determinism and round-trip", determinism_and_round_trip),
        (10, "schedule unit values", schedule_values),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
