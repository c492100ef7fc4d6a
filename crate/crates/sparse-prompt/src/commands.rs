//! The four subcommands, callable without going through the binary.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Deserialize;
use sparse_prompt_core::embedding::{embed_hashed, embed_synthetic};
use sparse_prompt_core::metrics::{
    average_performance, forgetting, generalization, layer_similarity_matrix, similarity_matrix, PerformanceTable,
};
use sparse_prompt_core::network::Mask;
use sparse_prompt_core::trainer::{run_sequence, RunEvent, RunReport};
use sparse_prompt_core::Error as CoreError;

use crate::artifacts::{self, DirLock, ErrorRecord, EventLine, EventWriter};
use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::embedding_file::{self, EmbeddingRecord};
use crate::error::CliError;

type CmdResult<T> = Result<T, CliError>;

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub lazy_update_after: Option<usize>,
    pub freeze_dictionary: bool,
    pub freeze_alpha: bool,
    pub repeat: Option<usize>,
}

impl RunArgs {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            ..Self::default()
        }
    }

    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        if let Some(n) = self.lazy_update_after {
            cfg.ablation.lazy_update_after = Some(n);
        }
        cfg.ablation.freeze_dictionary |= self.freeze_dictionary;
        cfg.ablation.freeze_alpha |= self.freeze_alpha;
        if let Some(k) = self.repeat {
            cfg.sequence.repeat = k;
        }
    }
}

fn failed_task(e: &CoreError) -> Option<usize> {
    match e {
        CoreError::Task { index, .. } => Some(*index),
        _ => None,
    }
}

/// Trains the configured sequence and writes every artifact into the output
/// directory. On a failure part way through, the events so far, the config
/// echo and an error record stay on disk.
pub fn run(args: &RunArgs) -> CmdResult<RunReport> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.apply(&mut cfg);
    let tasks = cfg.tasks()?;
    let settings = cfg.settings()?;
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| validation("output_dir: not set (use --out or `output_dir` in the config)"))?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let _lock = DirLock::acquire(&out)?;
    for stale in [artifacts::REPORT, artifacts::ERROR] {
        let p = out.join(stale);
        if p.exists() {
            fs::remove_file(&p).with_context(|| format!("removing stale {}", p.display()))?;
        }
    }
    let ckpt_dir = out.join(artifacts::CHECKPOINT);
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir).with_context(|| format!("removing stale {}", ckpt_dir.display()))?;
    }

    let mut echo = cfg.clone();
    echo.output_dir = None;
    fs::write(out.join(artifacts::CONFIG), echo.to_json())?;

    let mut events = EventWriter::create(&out.join(artifacts::EVENTS))?;
    log::info!("running {} tasks into {}", tasks.len(), out.display());
    let (report, state) = match run_sequence(&settings, &tasks, &mut events) {
        Ok(r) => r,
        Err(e) => {
            let record = ErrorRecord::new(failed_task(&e), e.to_string());
            events.write_error(&record)?;
            events.finish()?;
            artifacts::write_json(&out.join(artifacts::ERROR), &record)?;
            return Err(CliError::Runtime(anyhow!(e).context("run stopped")));
        }
    };
    events.finish()?;

    artifacts::write_json(&out.join(artifacts::REPORT), &report)?;
    let masks = report.task_masks();
    artifacts::write_similarity_csv(fs::File::create(out.join(artifacts::SIMILARITY))?, &report.task_ids, &report.similarity)?;
    for l in 0..cfg.architecture.hidden_widths.len() {
        let m = layer_similarity_matrix(&masks, l);
        let f = fs::File::create(out.join(artifacts::layer_similarity_name(l + 1)))?;
        artifacts::write_similarity_csv(f, &report.task_ids, &m)?;
    }
    checkpoint::save(&ckpt_dir, &Checkpoint::from_run(cfg.seed, state, &report))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EmbedProvider {
    Hashed,
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct EmbedArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub provider: EmbedProvider,
    pub m: usize,
    pub seed: u64,
    pub noise_scale: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptionLine {
    task_id: String,
    text: String,
    #[serde(default)]
    primitive: Option<u32>,
    #[serde(default)]
    variant: Option<u32>,
}

/// Reads `{"task_id", "text", "primitive"?, "variant"?}` lines and writes an
/// embedding file.
pub fn embed(args: &EmbedArgs) -> CmdResult<Vec<EmbeddingRecord>> {
    if args.m == 0 {
        return Err(validation("m: must be positive"));
    }
    let f = fs::File::open(&args.input).map_err(|e| validation(format!("input {}: {e}", args.input.display())))?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.context("reading input")?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{} line {}", args.input.display(), n + 1);
        let d: DescriptionLine = serde_json::from_str(&line).map_err(|e| validation(format!("{at}: {e}")))?;
        if !seen.insert(d.task_id.clone()) {
            return Err(validation(format!("{at}: duplicate task_id `{}`", d.task_id)));
        }
        let e = match args.provider {
            EmbedProvider::Hashed => embed_hashed(&d.text, args.m, args.seed),
            EmbedProvider::Synthetic => {
                let p = d
                    .primitive
                    .ok_or_else(|| validation(format!("{at}: the synthetic provider needs `primitive`")))?;
                embed_synthetic(p, d.variant.unwrap_or(0) as u64, args.m, args.noise_scale, args.seed)
            }
        }
        .map_err(|e| validation(format!("{at}: {e}")))?;
        records.push(EmbeddingRecord {
            task_id: d.task_id,
            m: args.m,
            values: e.vector,
        });
    }
    if records.is_empty() {
        return Err(validation(format!("{}: no task descriptions", args.input.display())));
    }
    embedding_file::write(&args.out, &records)?;
    Ok(records)
}

/// Similarity matrix of the tasks stored in a checkpoint: averaged over hidden
/// layers, or for one layer (1-based) if `layer` is given.
pub fn similarity(checkpoint_dir: &Path, layer: Option<usize>, out: &mut dyn Write) -> CmdResult<Vec<Vec<f64>>> {
    if !checkpoint_dir.join("manifest.json").exists() {
        return Err(validation(format!("{}: not a checkpoint directory", checkpoint_dir.display())));
    }
    let ckpt = checkpoint::load(checkpoint_dir)?;
    if ckpt.tasks.len() < 2 {
        return Err(validation(format!("checkpoint holds {} task(s); similarity needs at least 2", ckpt.tasks.len())));
    }
    let masks: Vec<Vec<Mask>> = ckpt.tasks.iter().map(|t| t.final_masks.clone()).collect();
    let ids: Vec<String> = ckpt.tasks.iter().map(|t| t.task_id.clone()).collect();
    let depth = masks[0].len();
    let m = match layer {
        None => similarity_matrix(&masks).map_err(anyhow::Error::from)?,
        Some(l) if (1..=depth).contains(&l) => layer_similarity_matrix(&masks, l - 1),
        Some(l) => return Err(validation(format!("layer: {l} is outside 1..={depth}"))),
    };
    artifacts::write_similarity_csv(out, &ids, &m)?;
    Ok(m)
}

/// Scalars recomputed from `events.jsonl`.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub task_ids: Vec<String>,
    pub final_average_performance: f64,
    pub forgetting: f64,
    pub generalization: f64,
    pub capacity_usage: Vec<f64>,
    pub steps_to_threshold: Vec<Option<usize>>,
    pub similarity: Vec<Vec<f64>>,
}

impl Summary {
    pub fn render(&self) -> String {
        let steps: Vec<String> = self
            .steps_to_threshold
            .iter()
            .map(|s| s.map_or("-".into(), |v| v.to_string()))
            .collect();
        let mut s = String::new();
        s += &format!("tasks={}\n", self.task_ids.len());
        s += &format!("P={:.4}\n", self.final_average_performance);
        s += &format!("F={:.4}\n", self.forgetting);
        s += &format!("G={:.4}\n", self.generalization);
        s += &format!("capacity={:.4}\n", self.capacity_usage.last().copied().unwrap_or(0.0));
        s += &format!("steps_to_threshold={}\n", steps.join(" "));
        s
    }
}

fn summarize(dir: &Path) -> CmdResult<Summary> {
    let cfg = RunConfig::load(&dir.join(artifacts::CONFIG))?;
    let widths = &cfg.architecture.hidden_widths;
    let delta = cfg.budget.steps_per_task as u64;
    let lines = artifacts::read_events(&dir.join(artifacts::EVENTS))?;
    if let Some(EventLine::Error(e)) = lines.last() {
        return Err(CliError::Runtime(anyhow!("run did not finish: {}", e.message)));
    }
    let mut ends = Vec::new();
    let mut columns = Vec::new();
    for l in lines {
        match l {
            EventLine::Run(RunEvent::TaskEnd {
                task_id,
                steps_to_threshold,
                capacity_usage,
                final_masks,
                ..
            }) => ends.push((task_id, steps_to_threshold, capacity_usage, final_masks)),
            EventLine::Run(RunEvent::Column { time, success }) => columns.push((time, success)),
            EventLine::Run(RunEvent::Eval { .. }) => {}
            EventLine::Error(_) => return Err(CliError::Runtime(anyhow!("error record before the end of the event stream"))),
        }
    }
    if ends.is_empty() {
        return Err(CliError::Runtime(anyhow!("no completed tasks in the event stream")));
    }
    let mut table = PerformanceTable::new(ends.len(), delta);
    for (time, col) in &columns {
        table.push_column(*time, col).map_err(anyhow::Error::from)?;
    }
    let last = *table.times.last().ok_or_else(|| anyhow!("no performance columns"))?;
    let steps: Vec<Option<usize>> = ends.iter().map(|e| e.1).collect();
    let steps64: Vec<Option<u64>> = steps.iter().map(|s| s.map(|v| v as u64)).collect();
    let mut masks = Vec::with_capacity(ends.len());
    for e in &ends {
        if e.3.len() != widths.len() {
            return Err(CliError::Runtime(anyhow!("task `{}` has masks for {} layers", e.0, e.3.len())));
        }
        let mut set = Vec::with_capacity(widths.len());
        for (idx, &k) in e.3.iter().zip(widths) {
            if idx.iter().any(|&j| j >= k) {
                return Err(CliError::Runtime(anyhow!("task `{}`: mask index out of range", e.0)));
            }
            set.push(Mask::from_indices(k, idx));
        }
        masks.push(set);
    }
    Ok(Summary {
        task_ids: ends.iter().map(|e| e.0.clone()).collect(),
        final_average_performance: average_performance(&table, last).map_err(anyhow::Error::from)?,
        forgetting: forgetting(&table).map_err(anyhow::Error::from)?,
        generalization: generalization(&steps64, delta).map_err(anyhow::Error::from)?,
        capacity_usage: ends.iter().map(|e| e.2).collect(),
        steps_to_threshold: steps,
        similarity: similarity_matrix(&masks).map_err(anyhow::Error::from)?,
    })
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Recomputes the headline numbers from the event stream and checks them
/// against `report.json`.
pub fn report(dir: &Path) -> CmdResult<Summary> {
    if !dir.is_dir() {
        return Err(validation(format!("{}: no such run directory", dir.display())));
    }
    if !dir.join(artifacts::EVENTS).exists() {
        return Err(validation(format!("{}: no {} here", dir.display(), artifacts::EVENTS)));
    }
    let summary = summarize(dir)?;
    let path = dir.join(artifacts::REPORT);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let stored: RunReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut mismatches = Vec::new();
    if stored.task_ids != summary.task_ids {
        mismatches.push("task_ids");
    }
    if stored.final_average_performance.to_bits() != summary.final_average_performance.to_bits() {
        mismatches.push("P");
    }
    if stored.forgetting.to_bits() != summary.forgetting.to_bits() {
        mismatches.push("F");
    }
    if stored.generalization.to_bits() != summary.generalization.to_bits() {
        mismatches.push("G");
    }
    if !same_bits(&stored.capacity_usage, &summary.capacity_usage) {
        mismatches.push("capacity_usage");
    }
    if stored.steps_to_threshold != summary.steps_to_threshold {
        mismatches.push("steps_to_threshold");
    }
    let sim_ok = stored.similarity.len() == summary.similarity.len()
        && stored.similarity.iter().zip(&summary.similarity).all(|(a, b)| same_bits(a, b));
    if !sim_ok {
        mismatches.push("similarity");
    }
    if !mismatches.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "{} disagrees with {}: {}",
            artifacts::REPORT,
            artifacts::EVENTS,
            mismatches.join(", ")
        )));
    }
    Ok(summary)
}
