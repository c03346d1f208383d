//! On-disk layout of a run directory:
//!
//! - `log.jsonl`: one [`GenLog`] per generation, append-only
//! - `checkpoint.json`: the latest [`Checkpoint`]
//! - `rules.json`: the rules awaiting feedback, while a run is blocked
//! - `record.json`: the [`RunFile`] written when the run ends

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ikemo_core::{Checkpoint, GenLog, RuleSet, RunConfig, RunRecord, Session, StateSnapshot};
use serde::{Deserialize, Serialize};

pub const RECORD: &str = "record.json";
pub const LOG: &str = "log.jsonl";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const RULES: &str = "rules.json";

/// Contents of `record.json`. Holds no timestamps or paths, so reruns with
/// the same config produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub config: RunConfig,
    pub record: RunRecord,
    #[serde(rename = "final")]
    pub final_state: StateSnapshot,
}

impl RunFile {
    pub fn of(session: &Session) -> Self {
        let mut config = session.config().clone();
        config.out = None;
        Self {
            config,
            record: session.record_summary(),
            final_state: session.snapshot(),
        }
    }
}

pub struct RunDir {
    path: PathBuf,
    log: BufWriter<File>,
    logged: usize,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

impl RunDir {
    /// Opens `path` for `session`, rewriting the log from the session's
    /// history so a resumed run never carries lines past its checkpoint.
    pub fn open(path: impl Into<PathBuf>, session: &Session) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path.join(LOG))
            .with_context(|| format!("cannot open {}", path.join(LOG).display()))?;
        let mut dir = Self {
            path,
            log: BufWriter::new(file),
            logged: 0,
        };
        dir.sync_log(&session.state().log)?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends the log lines not yet written.
    pub fn sync_log(&mut self, log: &[GenLog]) -> Result<()> {
        for line in &log[self.logged.min(log.len())..] {
            serde_json::to_writer(&mut self.log, line)?;
            self.log.write_all(b"\n")?;
        }
        self.logged = log.len();
        self.log.flush()?;
        Ok(())
    }

    pub fn write_checkpoint(&self, cp: &Checkpoint) -> Result<()> {
        write_atomic(&self.path.join(CHECKPOINT), &serde_json::to_vec(cp)?)
    }

    pub fn write_rules(&self, rules: &RuleSet) -> Result<()> {
        write_atomic(&self.path.join(RULES), &pretty(rules)?)
    }

    pub fn clear_rules(&self) -> Result<()> {
        match fs::remove_file(self.path.join(RULES)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    pub fn write_record(&self, file: &RunFile) -> Result<()> {
        write_atomic(&self.path.join(RECORD), &pretty(file)?)
    }
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(CHECKPOINT);
    let text =
        fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

/// Every `record.json` below `root`, in path order.
pub fn load_records(root: &Path) -> Result<Vec<RunFile>> {
    let mut found = Vec::new();
    collect(root, &mut found)?;
    found.sort();
    found
        .iter()
        .map(|p| {
            let text =
                fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("malformed {}", p.display()))
        })
        .collect()
}

fn collect(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == RECORD) {
            found.push(path);
        }
    }
    Ok(())
}
