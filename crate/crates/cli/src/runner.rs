//! Sweep executor: one coupled run per (sweep point, seed) on a bounded pool.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anyhow::Context;
use dboot_core::metrics::BootstrapReport;
use dboot_core::worlds::{run_coupled, CoupledReport};
use rayon::prelude::*;

use crate::config::{emit_config, ExperimentConfig, SweepPoint};
use crate::error::{CliError, CliResult};
use crate::records::{write_records, write_summary, RunSummary, WorldTag, RECORD_SCHEMA_VERSION, SUMMARY_FILE};

/// Name of the resolved config copy written at the top of a run directory.
pub const CONFIG_COPY: &str = "experiment.toml";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Added to every trial seed, for re-sharding seed ranges across machines.
    pub seed_offset: u64,
    pub output_dir: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct JobResult {
    pub point_index: usize,
    pub point_label: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub aborted: bool,
    pub report: Option<BootstrapReport>,
    pub coupled: CoupledReport,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    /// Ordered by sweep point, then seed.
    pub jobs: Vec<JobResult>,
}

impl RunOutcome {
    pub fn aborted(&self) -> impl Iterator<Item = &JobResult> {
        self.jobs.iter().filter(|j| j.aborted)
    }
}

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed-{seed}")
}

/// Run every (sweep point, seed) pair and write its records.
///
/// Each job writes only its own directory, so a job's files are complete
/// even if another job aborts. Aborted runs keep their partial records and are
/// flagged in [`JobResult::aborted`]; errors other than aborts fail the call.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> CliResult<RunOutcome> {
    config.validate()?;
    let out = config.resolve_output_dir(opts.output_dir.as_deref());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(CONFIG_COPY), emit_config(config)?)
        .with_context(|| format!("writing {}", out.join(CONFIG_COPY).display()))?;

    let oracle = Arc::new(config.data.build()?);
    let points = config.expand();
    let mut tasks = Vec::new();
    for point in &points {
        for &seed in &config.seeds {
            let seed = seed.checked_add(opts.seed_offset).ok_or_else(|| CliError::Config("seed overflow".into()))?;
            let replay = replay_config(&point.config, seed);
            let hash = replay.hash()?;
            tasks.push((point, replay, hash, seed));
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = opts.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(jobs);
    }
    let pool = builder.build().context("building worker pool")?;
    let total = tasks.len();
    let done = AtomicUsize::new(0);
    let results: Vec<CliResult<JobResult>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(point, replay, hash, seed)| {
                let result = run_job(point, replay, hash, *seed, &oracle, &out);
                let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                if !opts.quiet {
                    if let Ok(job) = &result {
                        eprintln!("[{finished}/{total}] {} seed {}{}", job.point_label, job.seed, describe(job));
                    }
                }
                result
            })
            .collect()
    });

    let jobs = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    Ok(RunOutcome { output_dir: out, jobs })
}

/// The config that reproduces one (sweep point, seed) run on its own: the
/// point's config with `seeds = [seed]` and no output directory. Its hash
/// keys the run's records, so it does not depend on how seeds are sharded.
pub fn replay_config(point_config: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut cfg = point_config.clone();
    cfg.seeds = vec![seed];
    cfg.output_dir = None;
    cfg
}

fn describe(job: &JobResult) -> String {
    match (&job.report, job.aborted) {
        (_, true) => ": ABORTED (non-finite update)".into(),
        (Some(r), _) => match r.t0 {
            Some(t0) => format!(": T0={t0} eps(T0)={:+.4} max|eps|={:.4}", r.eps_at_t0, r.max_abs_eps_pre_t0),
            None => format!(": T0 not reached, max|eps|={:.4}", r.max_abs_eps_pre_t0),
        },
        (None, _) => String::new(),
    }
}

fn run_job(
    point: &SweepPoint,
    replay: &ExperimentConfig,
    hash: &str,
    seed: u64,
    oracle: &Arc<dboot_core::distributions::Oracle>,
    out: &Path,
) -> CliResult<JobResult> {
    let world = replay.world_config(Arc::clone(oracle), seed);
    let coupled = run_coupled(&world)?;

    let dir = out.join(point.dir_name()).join(seed_dir_name(seed));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_records(&dir.join(WorldTag::Real.file_name()), hash, seed, WorldTag::Real, &coupled.real)?;
    write_records(&dir.join(WorldTag::Ideal.file_name()), hash, seed, WorldTag::Ideal, &coupled.ideal)?;

    let summary = RunSummary {
        schema_version: RECORD_SCHEMA_VERSION,
        config_hash: hash.to_string(),
        seed,
        point_index: point.index,
        point_label: point.label.clone(),
        config: replay.clone(),
        aborted: coupled.aborted(),
        real_converged_step: coupled.real.converged_step,
        ideal_converged_step: coupled.ideal.converged_step,
        report: coupled.report.clone(),
    };
    write_summary(&dir.join(SUMMARY_FILE), &summary)?;

    Ok(JobResult {
        point_index: point.index,
        point_label: point.label.clone(),
        seed,
        dir,
        aborted: coupled.aborted(),
        report: coupled.report.clone(),
        coupled,
    })
}
