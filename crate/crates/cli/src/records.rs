//! On-disk run records: one JSON object per eval step and world, plus a
//! summary per (sweep point, seed).
//!
//! Floats are written by `serde_json` in shortest round-trip decimal form and
//! parsed back with exact rounding, so every `f64` survives a round trip.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use dboot_core::metrics::{BootstrapReport, MetricsRecord};
use dboot_core::worlds::Trajectory;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldTag {
    Real,
    Ideal,
}

impl WorldTag {
    pub fn file_name(self) -> &'static str {
        match self {
            WorldTag::Real => "real.jsonl",
            WorldTag::Ideal => "ideal.jsonl",
        }
    }
}

/// One line of a record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub world: WorldTag,
    pub step: usize,
    pub lr: f64,
    pub train_error: f64,
    pub train_soft_error: Option<f64>,
    pub test_error: f64,
    pub test_soft_error: Option<f64>,
    pub test_loss: f64,
}

impl RecordLine {
    pub fn new(config_hash: &str, seed: u64, world: WorldTag, rec: &MetricsRecord) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            world,
            step: rec.step,
            lr: rec.lr,
            train_error: rec.train_error,
            train_soft_error: rec.train_soft_error,
            test_error: rec.test_error,
            test_soft_error: rec.test_soft_error,
            test_loss: rec.test_loss,
        }
    }

    pub fn metrics(&self) -> MetricsRecord {
        MetricsRecord {
            step: self.step,
            lr: self.lr,
            train_error: self.train_error,
            train_soft_error: self.train_soft_error,
            test_error: self.test_error,
            test_soft_error: self.test_soft_error,
            test_loss: self.test_loss,
        }
    }

    fn is_finite(&self) -> bool {
        [self.lr, self.train_error, self.test_error, self.test_loss].iter().all(|v| v.is_finite())
            && self.train_soft_error.is_none_or(f64::is_finite)
            && self.test_soft_error.is_none_or(f64::is_finite)
    }
}

/// Everything needed to replay and report one coupled run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config_hash: String,
    /// Master seed actually used (trial seed plus any seed offset).
    pub seed: u64,
    pub point_index: usize,
    pub point_label: String,
    /// The sweep point's config with `seeds = [seed]`; running it reproduces
    /// the record files byte for byte. `config_hash` is its SHA-256.
    pub config: ExperimentConfig,
    pub aborted: bool,
    pub real_converged_step: Option<usize>,
    pub ideal_converged_step: Option<usize>,
    pub report: Option<BootstrapReport>,
}

pub fn write_records(path: &Path, config_hash: &str, seed: u64, world: WorldTag, traj: &Trajectory) -> CliResult<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for rec in &traj.records {
        let line = RecordLine::new(config_hash, seed, world, rec);
        if !line.is_finite() {
            return Err(CliError::Diverged(format!("non-finite metric at step {} in {}", rec.step, path.display())));
        }
        let json = serde_json::to_string(&line).context("serializing record")?;
        writeln!(out, "{json}").with_context(|| format!("writing {}", path.display()))?;
    }
    out.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_records(path: &Path) -> CliResult<Vec<RecordLine>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        lines.push(rec);
    }
    Ok(lines)
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> CliResult<()> {
    let mut json = serde_json::to_string_pretty(summary).context("serializing summary")?;
    json.push('\n');
    std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> CliResult<RunSummary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
