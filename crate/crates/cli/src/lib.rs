//! Command-line driver: experiment configs, sweep execution, record files,
//! reports, and the toy regression runs.

pub mod config;
pub mod error;
pub mod records;
pub mod report;
pub mod runner;
pub mod svg;
pub mod toy_cmd;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "dboot", version, about = "Coupled Real/Ideal World training experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every sweep point and seed of a config file.
    Run {
        config: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Added to every seed in the config.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Linear regression toy settings A (identity link) and B (sign link).
    Toy(toy_cmd::ToyArgs),
    /// Rebuild the CSV summary and charts of a run directory.
    Report { dir: PathBuf },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

/// Parse `args` (including the program name) and execute; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Run { config, jobs, seed_offset, out, quiet } => {
            let cfg = config::load_config(&config)?;
            let opts = runner::RunOptions { jobs, seed_offset, output_dir: out, quiet };
            let outcome = runner::run_experiment(&cfg, &opts)?;
            let aborted: Vec<String> =
                outcome.aborted().map(|j| format!("{} seed {}", j.point_label, j.seed)).collect();
            println!("wrote {} coupled runs to {}", outcome.jobs.len(), outcome.output_dir.display());
            if !aborted.is_empty() {
                return Err(CliError::Diverged(format!(
                    "non-finite update in {} (partial records kept)",
                    aborted.join(", ")
                )));
            }
            Ok(())
        }
        Command::Toy(args) => {
            let (summary, out) = toy_cmd::cmd_toy(&args)?;
            println!("median terminal bootstrap gap      {:.6}", summary.median_bootstrap_gap);
            println!("median terminal generalization gap {:.6}", summary.median_generalization_gap);
            println!("median max bootstrap gap           {:.6}", summary.median_max_bootstrap_gap);
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Report { dir } => {
            let out = report::generate_report(&dir)?;
            println!("{} runs, {} charts -> {}", out.rows, out.charts, out.report_dir.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = config::load_config(&config)?;
            println!("ok: {} sweep points x {} seeds", cfg.expand().len(), cfg.seeds.len());
            Ok(())
        }
    }
}
