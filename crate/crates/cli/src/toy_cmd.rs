//! `dboot toy`: the two-setting linear regression contrast.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use dboot_core::toy::{run_toy, ToyCurves, ToyEval, ToySetting, ToySummary};
use serde::Serialize;

use crate::config::default_output_root;
use crate::error::{CliError, CliResult};
use crate::svg::{self, Panel, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingName {
    /// Identity link, n = 20.
    A,
    /// Sign link, n = 100.
    B,
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    #[arg(long, value_enum, ignore_case = true, default_value = "a")]
    pub setting: SettingName,
    /// Train-set size (default 20 for A, 100 for B).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// A count `N` (seeds 0..N), a range `a..b`, or a list `1,4,9`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Evaluate test MSE on this many fixed samples instead of in closed form.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Output directory (default `$DBOOT_OUTPUT_ROOT/toy-<setting>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct ToyReport<'a> {
    setting: &'a ToySetting,
    summary: ToySummary,
}

pub fn parse_seeds(text: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::Config(format!("cannot parse seeds {text:?}: expected N, a..b, or a,b,c"));
    let text = text.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else if text.contains(',') {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    } else {
        let n: u64 = text.parse().map_err(|_| bad())?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err(CliError::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

impl ToyArgs {
    pub fn to_setting(&self) -> CliResult<ToySetting> {
        let mut setting = match self.setting {
            SettingName::A => ToySetting::setting_a(),
            SettingName::B => ToySetting::setting_b(),
        };
        if let Some(n) = self.n {
            setting.n = n;
        }
        if let Some(d) = self.d {
            setting.d = d;
        }
        if let Some(eta) = self.eta {
            setting.eta = eta;
        }
        if let Some(steps) = self.steps {
            setting.steps = steps;
        }
        if let Some(seeds) = &self.seeds {
            setting.seeds = parse_seeds(seeds)?;
        }
        if let Some(samples) = self.mc_samples {
            setting.eval = ToyEval::MonteCarlo { samples };
        }
        setting.validate().map_err(|e| CliError::Config(e.to_string()))?;
        setting.oracle().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(setting)
    }

    fn output_dir(&self) -> PathBuf {
        let name = match self.setting {
            SettingName::A => "toy-a",
            SettingName::B => "toy-b",
        };
        self.out.clone().unwrap_or_else(|| default_output_root().join(name))
    }
}

/// Run the toy setting and write `curves.csv`, `per_seed.csv`,
/// `summary.json`, and `curves.svg`.
pub fn cmd_toy(args: &ToyArgs) -> CliResult<(ToySummary, PathBuf)> {
    let setting = args.to_setting()?;
    if setting.is_unstable() {
        return Err(CliError::Diverged(format!(
            "divergence: eta = {} gives 2*eta*lambda_max = {} >= 1",
            setting.eta,
            2.0 * setting.eta
        )));
    }
    let curves = run_toy(&setting)?;
    let finite = curves
        .per_seed
        .iter()
        .all(|s| s.real_train_mse.iter().chain(&s.real_test_mse).chain(&s.ideal_test_mse).all(|v| v.is_finite()));
    if !finite {
        return Err(CliError::Diverged("divergence: non-finite MSE during the toy run".into()));
    }
    let summary = curves.terminal_summary();
    let out = args.output_dir();
    write_toy_outputs(&out, &curves, summary)?;
    Ok((summary, out))
}

fn write_toy_outputs(out: &Path, curves: &ToyCurves, summary: ToySummary) -> CliResult<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let steps = curves.setting.steps;
    let gap_median = |f: fn(&dboot_core::toy::SeedCurves, usize) -> f64, t: usize| {
        dboot_core::toy::median(&curves.per_seed.iter().map(|s| f(s, t)).collect::<Vec<_>>())
    };

    let path = out.join("curves.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "step",
        "median_real_train_mse",
        "median_real_test_mse",
        "median_ideal_test_mse",
        "median_bootstrap_gap",
        "median_generalization_gap",
    ])
    .context("writing curves.csv")?;
    for t in 0..=steps {
        w.serialize((
            t,
            curves.median_real_train_mse[t],
            curves.median_real_test_mse[t],
            curves.median_ideal_test_mse[t],
            gap_median(|s, t| s.bootstrap_gap(t), t),
            gap_median(|s, t| s.generalization_gap(t), t),
        ))
        .context("writing curves.csv")?;
    }
    w.flush().context("writing curves.csv")?;

    let path = out.join("per_seed.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["seed", "step", "real_train_mse", "real_test_mse", "ideal_test_mse"])
        .context("writing per_seed.csv")?;
    for s in &curves.per_seed {
        for t in 0..=steps {
            w.serialize((s.seed, t, s.real_train_mse[t], s.real_test_mse[t], s.ideal_test_mse[t]))
                .context("writing per_seed.csv")?;
        }
    }
    w.flush().context("writing per_seed.csv")?;

    let report = ToyReport { setting: &curves.setting, summary };
    let mut json = serde_json::to_string_pretty(&report).context("serializing toy summary")?;
    json.push('\n');
    std::fs::write(out.join("summary.json"), json).context("writing summary.json")?;

    let line = |v: &[f64]| v.iter().enumerate().map(|(t, &y)| (t as f64, y)).collect::<Vec<_>>();
    let panel = Panel {
        title: format!("{:?} link, n = {} (median over {} seeds)", curves.setting.activation, curves.setting.n, curves.per_seed.len()),
        x_label: "step".into(),
        y_label: "MSE".into(),
        series: vec![
            Series { label: "Real test".into(), color: svg::REAL_COLOR, points: line(&curves.median_real_test_mse), fade_after: None },
            Series { label: "Real train".into(), color: "#ff7f0e", points: line(&curves.median_real_train_mse), fade_after: None },
            Series { label: "Ideal test".into(), color: svg::IDEAL_COLOR, points: line(&curves.median_ideal_test_mse), fade_after: None },
        ],
        reference_y: None,
        marker_x: None,
    };
    std::fs::write(out.join("curves.svg"), svg::line_chart(&[panel], 640.0, 320.0)).context("writing curves.svg")?;
    Ok(())
}
