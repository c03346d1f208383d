//! The work behind each subcommand, separate from argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use anyhow::{bail, Context, Result};
use ikemo_core::report::ReportError;
use ikemo_core::{BatchConfig, ProblemRegistry, Report, RunConfig, Session, UserFeedback};
use log::info;

use crate::driver::Driver;
use crate::output::{load_records, read_checkpoint, RunFile};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

/// Loads a run config and applies command-line overrides.
pub fn load_run_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.evo.seed = seed;
    }
    if out.is_some() {
        cfg.out = out;
    }
    Ok(cfg)
}

pub fn run_dir_name(cfg: &RunConfig) -> String {
    format!("{}_{}_seed{}", cfg.agent, cfg.user, cfg.evo.seed)
}

pub fn default_out(cfg: &RunConfig) -> PathBuf {
    cfg.out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(format!("{}_{}", cfg.problem, run_dir_name(cfg))))
}

/// Runs until the budget ends or the run blocks for feedback; the
/// directory then holds a checkpoint to resume from.
pub fn run(cfg: RunConfig, registry: &ProblemRegistry, checkpoint_every: usize) -> Result<Driver> {
    let dir = default_out(&cfg);
    let session = Session::new(cfg, registry)?;
    let mut driver = Driver::new(session, Some(dir), checkpoint_every)?;
    driver.run()?;
    Ok(driver)
}

/// Picks up the checkpoint in `dir`, answering a pending request first when
/// feedback is given.
pub fn resume(
    dir: &Path,
    feedback: Option<UserFeedback>,
    registry: &ProblemRegistry,
    checkpoint_every: usize,
) -> Result<Driver> {
    let session = Session::resume(read_checkpoint(dir)?, registry)?;
    let mut driver = Driver::new(session, Some(dir.to_path_buf()), checkpoint_every)?;
    if let Some(fb) = feedback {
        driver.submit_feedback(fb)??;
    }
    driver.run()?;
    Ok(driver)
}

pub fn read_feedback(path: &Path) -> Result<UserFeedback> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let fb: UserFeedback =
        serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))?;
    if let Err(fields) = fb.validate() {
        let lines: Vec<String> = fields.iter().map(|f| format!("  {f}")).collect();
        bail!("invalid feedback:\n{}", lines.join("\n"));
    }
    Ok(fb)
}

/// Runs the whole grid on `jobs` threads, then reports on it.
pub fn batch(
    batch: &BatchConfig,
    registry: &ProblemRegistry,
    out: &Path,
    jobs: usize,
) -> Result<Report> {
    batch.validate(registry)?;
    let runs = batch.expand();
    info!("batch of {} runs into {}", runs.len(), out.display());
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(runs.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = runs.get(k) else { break };
                let dir = out.join(run_dir_name(cfg));
                let result = Session::new(cfg.clone(), registry)
                    .map_err(anyhow::Error::from)
                    .and_then(|s| Driver::new(s, Some(dir), 0))
                    .and_then(|mut d| d.run());
                match result {
                    Ok(_) => info!("finished {}", run_dir_name(cfg)),
                    Err(e) => failures
                        .lock()
                        .expect("failure list")
                        .push(format!("{}: {e:#}", run_dir_name(cfg))),
                }
            });
        }
    });
    let failures = failures.into_inner().expect("failure list");
    if !failures.is_empty() {
        bail!(
            "{} runs failed:\n  {}",
            failures.len(),
            failures.join("\n  ")
        );
    }
    report(out)
}

/// Aggregates every `record.json` under `dir` and writes the report next to
/// them.
pub fn report(dir: &Path) -> Result<Report> {
    let files = if dir.is_dir() {
        load_records(dir)?
    } else {
        Vec::new()
    };
    let records: Vec<_> = files.into_iter().map(|f: RunFile| f.record).collect();
    let report = Report::build(&records).map_err(|e: ReportError| anyhow::anyhow!(e))?;
    fs::write(dir.join(REPORT_CSV), report.to_csv())?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    fs::write(dir.join(REPORT_JSON), json)?;
    Ok(report)
}
