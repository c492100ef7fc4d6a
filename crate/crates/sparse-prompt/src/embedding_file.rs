//! Embedding files: one JSON record per line, `{"task_id", "m", "values"}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub task_id: String,
    pub m: usize,
    pub values: Vec<f64>,
}

pub fn write(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and checks every record: `m` matches the vector, ids are unique.
pub fn read(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out: Vec<EmbeddingRecord> = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EmbeddingRecord =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), n + 1))?;
        if r.values.len() != r.m {
            bail!("{} line {}: m = {} but {} values", path.display(), n + 1, r.m, r.values.len());
        }
        if out.iter().any(|o| o.task_id == r.task_id) {
            bail!("{}: duplicate task_id `{}`", path.display(), r.task_id);
        }
        out.push(r);
    }
    Ok(out)
}
