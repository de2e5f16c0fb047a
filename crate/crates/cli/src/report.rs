//! Summaries and charts rebuilt from record files alone.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::Context;
use dboot_core::metrics::{bootstrap_report, BootstrapReport, GapMetric, MetricsRecord};
use dboot_core::worlds::Trajectory;
use serde::Serialize;
use walkdir::WalkDir;

use crate::error::{CliError, CliResult};
use crate::records::{read_records, read_summary, RunSummary, WorldTag, RECORD_SCHEMA_VERSION, SUMMARY_FILE};
use crate::svg::{self, Panel, Series};

/// Subdirectory of the run directory that reports are written to. It is
/// replaced wholesale on every invocation.
pub const REPORT_DIR: &str = "report";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SCATTER_SVG: &str = "scatter.svg";
pub const CURVES_DIR: &str = "curves";

/// One coupled run as read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    /// Seed directory relative to the run root.
    pub rel_dir: PathBuf,
    pub summary: RunSummary,
    pub real: Trajectory,
    pub ideal: Trajectory,
}

impl LoadedRun {
    fn metric(&self) -> GapMetric {
        match self.real.records.first().and_then(|r| r.test_soft_error) {
            Some(_) => GapMetric::SoftError,
            None => GapMetric::Error,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct CsvRow<'a> {
    point_index: usize,
    point_label: &'a str,
    seed: u64,
    n: usize,
    base_lr: f64,
    aborted: bool,
    metric: Option<GapMetric>,
    t0: Option<usize>,
    t0_effective: Option<usize>,
    eps_at_t0: Option<f64>,
    abs_eps_at_t0: Option<f64>,
    max_abs_eps_pre_t0: Option<f64>,
    gen_gap_at_t0: Option<f64>,
    real_final_test: Option<f64>,
    ideal_final_test: Option<f64>,
    config_hash: &'a str,
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub report_dir: PathBuf,
    pub rows: usize,
    pub charts: usize,
}

/// All runs under `root`, ordered by (sweep point, seed).
///
/// Checks that every stored bootstrap report equals the one recomputed from
/// the record files.
pub fn load_runs(root: &Path) -> CliResult<Vec<LoadedRun>> {
    let report_dir = root.join(REPORT_DIR);
    let mut summaries = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name().into_iter().filter_entry(|e| e.path() != report_dir) {
        let entry = entry.with_context(|| format!("scanning {}", root.display()))?;
        if entry.file_type().is_file() && entry.file_name() == SUMMARY_FILE {
            summaries.push(entry.into_path());
        }
    }
    if summaries.is_empty() {
        return Err(CliError::Input(format!("no {SUMMARY_FILE} files under {}", root.display())));
    }

    let mut versions = BTreeSet::new();
    for path in &summaries {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        versions.insert(version);
    }
    if versions.len() > 1 {
        let list: Vec<String> =
            versions.iter().map(|v| v.map_or("missing".to_string(), |v| v.to_string())).collect();
        return Err(CliError::Input(format!("mixed record schema versions: {}", list.join(", "))));
    }
    if versions.first() != Some(&Some(RECORD_SCHEMA_VERSION as u64)) {
        return Err(CliError::Input(format!("unsupported record schema version (expected {RECORD_SCHEMA_VERSION})")));
    }

    let mut runs = summaries.iter().map(|path| load_run(root, path)).collect::<CliResult<Vec<_>>>()?;
    runs.sort_by(|a, b| {
        (a.summary.point_index, a.summary.seed, &a.rel_dir).cmp(&(b.summary.point_index, b.summary.seed, &b.rel_dir))
    });
    Ok(runs)
}

fn load_run(root: &Path, summary_path: &Path) -> CliResult<LoadedRun> {
    let dir = summary_path.parent().expect("file has a parent");
    let summary = read_summary(summary_path)?;
    let load = |world: WorldTag| -> CliResult<Trajectory> {
        let path = dir.join(world.file_name());
        let lines = read_records(&path)?;
        for line in &lines {
            if line.seed != summary.seed || line.config_hash != summary.config_hash || line.world != world {
                return Err(CliError::Input(format!("{} has records from another run", path.display())));
            }
        }
        let converged = match world {
            WorldTag::Real => summary.real_converged_step,
            WorldTag::Ideal => summary.ideal_converged_step,
        };
        Ok(Trajectory {
            records: lines.iter().map(|l| l.metrics()).collect(),
            converged_step: converged,
            aborted: summary.aborted,
        })
    };
    let real = load(WorldTag::Real)?;
    let ideal = load(WorldTag::Ideal)?;

    if !summary.aborted {
        let recomputed = bootstrap_report(&real, &ideal, summary.config.training.stop_threshold)?;
        if summary.report.as_ref() != Some(&recomputed) {
            return Err(CliError::Input(format!(
                "{}: stored bootstrap report does not match the record files",
                summary_path.display()
            )));
        }
    }
    let rel_dir = dir.strip_prefix(root).unwrap_or(dir).to_path_buf();
    Ok(LoadedRun { rel_dir, summary, real, ideal })
}

/// Write `report/summary.csv`, one curve chart per run, and the end-of-training
/// scatter. Output depends only on the files under `root`.
pub fn generate_report(root: &Path) -> CliResult<ReportOutput> {
    let runs = load_runs(root)?;
    let report_dir = root.join(REPORT_DIR);
    if report_dir.exists() {
        std::fs::remove_dir_all(&report_dir).with_context(|| format!("clearing {}", report_dir.display()))?;
    }
    let curves_dir = report_dir.join(CURVES_DIR);
    std::fs::create_dir_all(&curves_dir).with_context(|| format!("creating {}", curves_dir.display()))?;

    write_csv(&report_dir.join(SUMMARY_CSV), &runs)?;

    let mut charts = 0;
    for run in &runs {
        let name = format!("{}.svg", chart_stem(&run.rel_dir));
        let path = curves_dir.join(name);
        std::fs::write(&path, curve_chart(run)).with_context(|| format!("writing {}", path.display()))?;
        charts += 1;
    }

    let points: Vec<(f64, f64)> = runs
        .iter()
        .filter(|r| !r.summary.aborted)
        .filter_map(|r| Some((final_metric(&r.ideal)?, final_metric(&r.real)?)))
        .collect();
    let metric = runs.first().map_or(GapMetric::SoftError, LoadedRun::metric);
    let label = metric_label(metric);
    let scatter = svg::scatter(
        "End of training: Real vs Ideal",
        &format!("Ideal World {label}"),
        &format!("Real World {label}"),
        &points,
        420.0,
    );
    let path = report_dir.join(SCATTER_SVG);
    std::fs::write(&path, scatter).with_context(|| format!("writing {}", path.display()))?;

    Ok(ReportOutput { report_dir, rows: runs.len(), charts })
}

fn write_csv(path: &Path, runs: &[LoadedRun]) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for run in runs {
        let s = &run.summary;
        let r: Option<&BootstrapReport> = s.report.as_ref();
        let row = CsvRow {
            point_index: s.point_index,
            point_label: &s.point_label,
            seed: s.seed,
            n: s.config.training.n,
            base_lr: s.config.optimizer.base_lr,
            aborted: s.aborted,
            metric: r.map(|r| r.metric),
            t0: r.and_then(|r| r.t0),
            t0_effective: r.map(|r| r.t0_effective),
            eps_at_t0: r.map(|r| r.eps_at_t0),
            abs_eps_at_t0: r.map(|r| r.abs_eps_at_t0),
            max_abs_eps_pre_t0: r.map(|r| r.max_abs_eps_pre_t0),
            gen_gap_at_t0: r.map(|r| r.gen_gap_at_t0),
            real_final_test: final_metric(&run.real),
            ideal_final_test: final_metric(&run.ideal),
            config_hash: &s.config_hash,
        };
        writer.serialize(row).with_context(|| format!("writing {}", path.display()))?;
    }
    writer.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn final_metric(traj: &Trajectory) -> Option<f64> {
    traj.last().map(MetricsRecord::test_gap_metric)
}

fn metric_label(metric: GapMetric) -> &'static str {
    match metric {
        GapMetric::SoftError => "test soft-error",
        GapMetric::Error => "test error",
    }
}

fn chart_stem(rel_dir: &Path) -> String {
    let parts: Vec<String> = rel_dir.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    if parts.is_empty() {
        "run".into()
    } else {
        parts.join("__")
    }
}

fn curve_chart(run: &LoadedRun) -> String {
    let t0 = run.summary.report.as_ref().and_then(|r| r.t0).map(|t| t as f64);
    let points = |traj: &Trajectory| -> Vec<(f64, f64)> {
        traj.records.iter().map(|r| (r.step as f64, r.test_gap_metric())).collect()
    };
    let label = metric_label(run.metric());
    let title = format!("{} seed {}", run.summary.point_label, run.summary.seed);
    let mut panels = vec![Panel {
        title: if run.summary.aborted { format!("{title} (aborted)") } else { title },
        x_label: "step".into(),
        y_label: label.into(),
        series: vec![
            Series { label: "Real World".into(), color: svg::REAL_COLOR, points: points(&run.real), fade_after: t0 },
            Series { label: "Ideal World".into(), color: svg::IDEAL_COLOR, points: points(&run.ideal), fade_after: t0 },
        ],
        reference_y: None,
        marker_x: t0,
    }];
    if let Some(report) = &run.summary.report {
        panels.push(Panel {
            title: "bootstrap gap".into(),
            x_label: "step".into(),
            y_label: "eps = Real - Ideal".into(),
            series: vec![Series {
                label: "eps".into(),
                color: svg::GAP_COLOR,
                points: report.eps_series.iter().map(|p| (p.step as f64, p.eps)).collect(),
                fade_after: t0,
            }],
            reference_y: Some(0.0),
            marker_x: t0,
        });
    }
    svg::line_chart(&panels, 640.0, 260.0)
}
