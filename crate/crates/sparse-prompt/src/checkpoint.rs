//! Checkpoint bundles: a directory holding `manifest.json` and one flat
//! little-endian tensor file per role. The manifest records shapes, dtypes
//! and a SHA-256 per file; loading verifies all of them.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparse_prompt_core::dictionary::{DictStats, LayerDictionary};
use sparse_prompt_core::network::{AccumulatedMask, DenseLayer, Mask, MetaPolicy};
use sparse_prompt_core::trainer::{LearnerState, RunReport};
use sparse_prompt_core::Matrix;

pub const FORMAT: &str = "sparse-prompt-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSnapshot {
    pub task_id: String,
    pub final_masks: Vec<Mask>,
    pub final_prompt: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub state: LearnerState,
    pub tasks: Vec<TaskSnapshot>,
}

impl Checkpoint {
    pub fn from_run(seed: u64, state: LearnerState, report: &RunReport) -> Self {
        let tasks = report
            .tasks
            .iter()
            .map(|r| TaskSnapshot {
                task_id: r.task_id.clone(),
                final_masks: r.final_masks.clone(),
                final_prompt: r.final_prompt.clone(),
            })
            .collect();
        Self { seed, state, tasks }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    U8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub name: String,
    pub role: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsScalars {
    pub sum_sq_embeddings: f64,
    pub task_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub crate_version: String,
    pub seed: u64,
    /// `[input, hidden…, output]`
    pub widths: Vec<usize>,
    pub negative_slope: f64,
    pub embedding_dim: usize,
    pub norm_bound: f64,
    pub head_bias_frozen: bool,
    pub stats: Vec<StatsScalars>,
    pub task_ids: Vec<String>,
    pub files: Vec<FileEntry>,
}

fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn f64_from(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn mask_bytes(m: &Mask) -> Vec<u8> {
    m.iter().map(u8::from).collect()
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<FileEntry>,
}

impl Writer<'_> {
    fn put(&mut self, name: String, role: &str, dtype: Dtype, shape: Vec<usize>, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(&name);
        fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry {
            name,
            role: role.into(),
            dtype,
            shape,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn matrix(&mut self, name: String, role: &str, m: &Matrix) -> Result<()> {
        self.put(name, role, Dtype::F64, vec![m.rows(), m.cols()], f64_bytes(m.as_slice()))
    }
}

pub fn save(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let state = &ckpt.state;
    let mut w = Writer { dir, files: Vec::new() };
    for (l, layer) in state.policy.layers().iter().enumerate() {
        w.matrix(format!("policy.layer{}.weights.bin", l + 1), "policy_weights", &layer.weights)?;
        w.put(
            format!("policy.layer{}.bias.bin", l + 1),
            "policy_bias",
            Dtype::F64,
            vec![layer.bias.len()],
            f64_bytes(&layer.bias),
        )?;
    }
    for (l, (d, s)) in state.dictionaries.iter().zip(&state.stats).enumerate() {
        w.matrix(format!("dictionary.layer{}.bin", l + 1), "dictionary", d.atoms())?;
        w.matrix(format!("stats.layer{}.a.bin", l + 1), "stats_a", &s.a)?;
        w.matrix(format!("stats.layer{}.b.bin", l + 1), "stats_b", &s.b)?;
    }
    for (l, m) in state.accumulated.layers.iter().enumerate() {
        w.put(format!("accumulated.layer{}.bin", l + 1), "accumulated_mask", Dtype::U8, vec![m.len()], mask_bytes(m))?;
    }
    for (t, task) in ckpt.tasks.iter().enumerate() {
        for (l, (m, a)) in task.final_masks.iter().zip(&task.final_prompt).enumerate() {
            w.put(format!("task{t}.mask.layer{}.bin", l + 1), "task_mask", Dtype::U8, vec![m.len()], mask_bytes(m))?;
            w.put(format!("task{t}.prompt.layer{}.bin", l + 1), "task_prompt", Dtype::F64, vec![a.len()], f64_bytes(a))?;
        }
    }
    let policy = &state.policy;
    let mut widths = vec![policy.input_dim()];
    widths.extend(policy.hidden_widths());
    widths.push(policy.output_dim());
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        seed: ckpt.seed,
        widths,
        negative_slope: policy.negative_slope(),
        embedding_dim: state.dictionaries.first().map_or(0, |d| d.embedding_dim()),
        norm_bound: state.dictionaries.first().map_or(1.0, |d| d.norm_bound()),
        head_bias_frozen: state.accumulated.head_bias_frozen,
        stats: state
            .stats
            .iter()
            .map(|s| StatsScalars {
                sum_sq_embeddings: s.sum_sq_embeddings,
                task_count: s.task_count,
            })
            .collect(),
        task_ids: ckpt.tasks.iter().map(|t| t.task_id.clone()).collect(),
        files: w.files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

struct Reader<'a> {
    dir: &'a Path,
    manifest: &'a Manifest,
}

impl Reader<'_> {
    fn raw(&self, name: &str, dtype: Dtype, shape: &[usize]) -> Result<Vec<u8>> {
        let entry = self
            .manifest
            .files
            .iter()
            .find(|f| f.name == name)
            .with_context(|| format!("manifest lists no `{name}`"))?;
        ensure!(entry.dtype == dtype, "`{name}`: dtype {:?}, expected {:?}", entry.dtype, dtype);
        ensure!(entry.shape == shape, "`{name}`: shape {:?}, expected {:?}", entry.shape, shape);
        let bytes = fs::read(self.dir.join(name)).with_context(|| format!("reading `{name}`"))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        ensure!(digest == entry.sha256, "`{name}`: checksum mismatch");
        let width = if dtype == Dtype::F64 { 8 } else { 1 };
        ensure!(
            bytes.len() == width * shape.iter().product::<usize>(),
            "`{name}`: {} bytes do not match shape {:?}",
            bytes.len(),
            shape
        );
        Ok(bytes)
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let v = f64_from(&self.raw(name, Dtype::F64, &[rows, cols])?);
        Ok(Matrix::from_vec(rows, cols, v)?)
    }

    fn vector(&self, name: &str, n: usize) -> Result<Vec<f64>> {
        Ok(f64_from(&self.raw(name, Dtype::F64, &[n])?))
    }

    fn mask(&self, name: &str, n: usize) -> Result<Mask> {
        let bytes = self.raw(name, Dtype::U8, &[n])?;
        ensure!(bytes.iter().all(|b| *b <= 1), "`{name}`: mask bytes must be 0 or 1");
        Ok(bytes.iter().map(|b| *b == 1).collect())
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if m.format != FORMAT || m.version != VERSION {
        bail!("{}: unsupported checkpoint {} v{}", path.display(), m.format, m.version);
    }
    Ok(m)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let widths = &manifest.widths;
    ensure!(widths.len() >= 3, "checkpoint needs at least one hidden layer");
    let hidden = &widths[1..widths.len() - 1];
    ensure!(manifest.stats.len() == hidden.len(), "stats for {} layers, expected {}", manifest.stats.len(), hidden.len());
    let r = Reader { dir, manifest: &manifest };
    let m = manifest.embedding_dim;

    let mut layers = Vec::with_capacity(widths.len() - 1);
    for l in 0..widths.len() - 1 {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        layers.push(DenseLayer {
            weights: r.matrix(&format!("policy.layer{}.weights.bin", l + 1), fan_out, fan_in)?,
            bias: r.vector(&format!("policy.layer{}.bias.bin", l + 1), fan_out)?,
        });
    }
    let policy = MetaPolicy::from_layers(layers, manifest.negative_slope)?;

    let mut dictionaries = Vec::with_capacity(hidden.len());
    let mut stats = Vec::with_capacity(hidden.len());
    let mut accumulated = Vec::with_capacity(hidden.len());
    for (l, &k) in hidden.iter().enumerate() {
        let atoms = r.matrix(&format!("dictionary.layer{}.bin", l + 1), m, k)?;
        dictionaries.push(LayerDictionary::from_parts(atoms, manifest.norm_bound, l + 1)?);
        let s = &manifest.stats[l];
        stats.push(DictStats {
            a: r.matrix(&format!("stats.layer{}.a.bin", l + 1), k, k)?,
            b: r.matrix(&format!("stats.layer{}.b.bin", l + 1), m, k)?,
            sum_sq_embeddings: s.sum_sq_embeddings,
            task_count: s.task_count,
        });
        accumulated.push(r.mask(&format!("accumulated.layer{}.bin", l + 1), k)?);
    }

    let mut tasks = Vec::with_capacity(manifest.task_ids.len());
    for (t, id) in manifest.task_ids.iter().enumerate() {
        let mut final_masks = Vec::with_capacity(hidden.len());
        let mut final_prompt = Vec::with_capacity(hidden.len());
        for (l, &k) in hidden.iter().enumerate() {
            final_masks.push(r.mask(&format!("task{t}.mask.layer{}.bin", l + 1), k)?);
            final_prompt.push(r.vector(&format!("task{t}.prompt.layer{}.bin", l + 1), k)?);
        }
        tasks.push(TaskSnapshot {
            task_id: id.clone(),
            final_masks,
            final_prompt,
        });
    }

    Ok(Checkpoint {
        seed: manifest.seed,
        state: LearnerState {
            policy,
            dictionaries,
            stats,
            accumulated: AccumulatedMask {
                layers: accumulated,
                head_bias_frozen: manifest.head_bias_frozen,
            },
        },
        tasks,
    })
}
