//! Files written into a run's output directory.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sparse_prompt_core::trainer::{Observer, RunEvent};

pub const CONFIG: &str = "config.json";
pub const EVENTS: &str = "events.jsonl";
pub const REPORT: &str = "report.json";
pub const ERROR: &str = "error.json";
pub const SIMILARITY: &str = "similarity.csv";
pub const CHECKPOINT: &str = "checkpoint";
pub const LOCK: &str = ".lock";

pub fn layer_similarity_name(layer: usize) -> String {
    format!("similarity.layer{layer}.csv")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Square matrix with task ids as the header row and first column.
pub fn write_similarity_csv<W: Write>(out: W, ids: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["task_id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(matrix) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Written as the last line of `events.jsonl` and as `error.json` when a run
/// stops early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub event: String,
    /// Index of the task that failed, if the failure was inside a task.
    pub task: Option<usize>,
    pub message: String,
}

impl ErrorRecord {
    pub fn new(task: Option<usize>, message: String) -> Self {
        Self {
            event: "error".into(),
            task,
            message,
        }
    }
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq)]
pub enum EventLine {
    Run(RunEvent),
    Error(ErrorRecord),
}

pub fn parse_event_line(line: &str) -> Result<EventLine> {
    let v: serde_json::Value = serde_json::from_str(line)?;
    if v.get("event").and_then(|e| e.as_str()) == Some("error") {
        Ok(EventLine::Error(serde_json::from_value(v)?))
    } else {
        Ok(EventLine::Run(serde_json::from_value(v)?))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<EventLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_event_line(l).with_context(|| format!("{} line {}", path.display(), n + 1)))
        .collect()
}

/// Appends each event to `events.jsonl` as it arrives and flushes, so a run
/// that dies part way still leaves every completed event on disk.
pub struct EventWriter {
    out: BufWriter<File>,
    failed: Option<io::Error>,
}

impl EventWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(f),
            failed: None,
        })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub fn write_error(&mut self, record: &ErrorRecord) -> Result<()> {
        self.line(record)?;
        Ok(())
    }

    /// First I/O error hit while writing events, if any.
    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.failed.take() {
            return Err(e).context("writing events");
        }
        self.out.flush()?;
        Ok(())
    }
}

impl Observer for EventWriter {
    fn on_event(&mut self, event: &RunEvent) {
        if let RunEvent::TaskEnd {
            task,
            task_id,
            final_success,
            steps_to_threshold,
            ..
        } = event
        {
            log::info!("task {task} `{task_id}`: success {final_success:.3}, steps to threshold {steps_to_threshold:?}");
        }
        if self.failed.is_none() {
            if let Err(e) = self.line(event) {
                self.failed = Some(e);
            }
        }
    }
}

/// Exclusive hold on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| format!("{} is in use by another run (remove {} if it is stale)", dir.display(), path.display()))?;
        writeln!(f, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
