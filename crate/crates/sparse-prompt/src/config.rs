//! Run configuration: a JSON document with every key checked.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparse_prompt_core::sparse_coding::SolverConfig;
use sparse_prompt_core::tasks::{
    validate_sequence, EnvSpec, EpisodicTask, SyntheticSequence, TargetFamily, TaskKind, TaskSpec,
};
use sparse_prompt_core::trainer::{Ablation, Architecture, EmbeddingSource, Optimizer, RunSettings, TrainBudget};
use sparse_prompt_core::embedding::TaskDescription;

use crate::embedding_file;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    /// Name of a built-in sequence, see [`preset`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<TaskSpec>>,
    /// The whole sequence is run this many times; later copies get a `#n`
    /// id suffix and share the first copy's embedding.
    #[serde(default = "one")]
    pub repeat: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default = "kkt_tol")]
    pub kkt_tol: f64,
    #[serde(default = "sweep_tol")]
    pub sweep_tol: f64,
}

fn kkt_tol() -> f64 {
    SolverConfig::default().kkt_tol
}

fn sweep_tol() -> f64 {
    SolverConfig::default().sweep_tol
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            max_iter: d.max_iter,
            kkt_tol: d.kkt_tol,
            sweep_tol: d.sweep_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hashed { seed: u64 },
    Synthetic { noise_scale: f64, seed: u64 },
    /// Embedding file written by `sparse-prompt embed` (or by hand).
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sequence: SequenceConfig,
    pub architecture: Architecture,
    pub embedding_dim: usize,
    pub lambda: f64,
    #[serde(default = "unit")]
    pub norm_bound: f64,
    #[serde(default = "one")]
    pub dictionary_passes: usize,
    #[serde(default)]
    pub solver: SolverSection,
    pub budget: TrainBudget,
    pub optimizer: Optimizer,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn unit() -> f64 {
    1.0
}

/// Built-in task sequences.
///
/// - `desk`: 3 primitives × 2 variants of 4→2 linear regression targets.
/// - `desk-mlp`: same layout with small random-MLP targets.
/// - `grid`: four 3×3 grid worlds, one goal per corner; observation 9, actions 4.
pub fn preset(name: &str) -> Option<Vec<TaskSpec>> {
    let synthetic = |family| SyntheticSequence {
        primitives: 3,
        variants: 2,
        repeat: 1,
        input_dim: 4,
        output_dim: 2,
        family,
        variant_scale: 0.2,
        margin: 0.05,
        eval_points: 32,
        task_seed: 3,
    };
    match name {
        "desk" => synthetic(TargetFamily::Linear).build().ok(),
        "desk-mlp" => synthetic(TargetFamily::Mlp { hidden: 8 }).build().ok(),
        "grid" => Some(
            [(2, 2), (0, 2), (2, 0), (0, 0)]
                .iter()
                .enumerate()
                .map(|(i, &goal)| TaskSpec {
                    description: TaskDescription::new(
                        format!("grid-{}-{}", goal.0, goal.1),
                        format!("walk to the corner at column {} row {}", goal.0, goal.1),
                    ),
                    primitive: goal.1 as u32 / 2,
                    variant: i as u32,
                    kind: TaskKind::Episodic(EpisodicTask {
                        env: EnvSpec::GridWorld {
                            width: 3,
                            height: 3,
                            goal,
                            goal_reward: 1.0,
                            step_reward: 0.0,
                        },
                        gamma: 0.9,
                        horizon: 8,
                        episodes_per_batch: 8,
                    }),
                })
                .collect(),
        ),
        _ => None,
    }
}

pub const PRESETS: [&str; 3] = ["desk", "desk-mlp", "grid"];

fn repeat_tasks(base: Vec<TaskSpec>, k: usize) -> Vec<TaskSpec> {
    let mut out = Vec::with_capacity(base.len() * k);
    for r in 0..k {
        for t in &base {
            let mut t = t.clone();
            if r > 0 {
                t.description.task_id = format!("{}#{}", t.embedding_key(), r + 1);
            }
            out.push(t);
        }
    }
    out
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {reason}"))
}

impl RunConfig {
    /// The desk-scale defaults used throughout the tests: two hidden layers
    /// of 64, m = 32, λ = 1e-3.
    pub fn desk() -> Self {
        Self {
            sequence: SequenceConfig {
                preset: Some("desk".into()),
                synthetic: None,
                tasks: None,
                repeat: 1,
            },
            architecture: Architecture {
                input_dim: 4,
                hidden_widths: vec![64, 64],
                output_dim: 2,
                negative_slope: 0.01,
            },
            embedding_dim: 32,
            lambda: 1e-3,
            norm_bound: 1.0,
            dictionary_passes: 1,
            solver: SolverSection::default(),
            budget: TrainBudget {
                theta_steps_per_block: 10,
                alpha_steps_per_block: 1,
                steps_per_task: 600,
                eval_interval: 20,
                success_threshold: 0.9,
                batch_size: 32,
            },
            optimizer: Optimizer {
                theta_lr: 0.2,
                alpha_lr: 0.1,
                baseline_decay: 0.1,
            },
            embedding: EmbeddingConfig::Synthetic {
                noise_scale: 0.3,
                seed: 11,
            },
            ablation: Ablation::default(),
            seed: 0,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        // relative embedding paths are resolved against the config's directory
        if let EmbeddingConfig::File { path: p } = &mut cfg.embedding {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>, CliError> {
        let s = &self.sequence;
        let given = [s.preset.is_some(), s.synthetic.is_some(), s.tasks.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(invalid("sequence", "set exactly one of `preset`, `synthetic`, `tasks`"));
        }
        if s.repeat == 0 {
            return Err(invalid("sequence.repeat", "must be positive"));
        }
        let base = if let Some(name) = &s.preset {
            preset(name).ok_or_else(|| {
                invalid("sequence.preset", format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")))
            })?
        } else if let Some(syn) = &s.synthetic {
            syn.build().map_err(|e| invalid("sequence.synthetic", e))?
        } else {
            s.tasks.clone().unwrap_or_default()
        };
        let tasks = repeat_tasks(base, s.repeat);
        let a = &self.architecture;
        validate_sequence(&tasks, a.input_dim, a.output_dim).map_err(|e| invalid("sequence", e))?;
        Ok(tasks)
    }

    /// Core settings; loads the embedding file if one is configured.
    pub fn settings(&self) -> Result<RunSettings, CliError> {
        let embedding = match &self.embedding {
            EmbeddingConfig::Hashed { seed } => EmbeddingSource::Hashed { seed: *seed },
            EmbeddingConfig::Synthetic { noise_scale, seed } => EmbeddingSource::Synthetic {
                noise_scale: *noise_scale,
                seed: *seed,
            },
            EmbeddingConfig::File { path } => {
                let records = embedding_file::read(path).map_err(|e| invalid("embedding.path", format!("{e:#}")))?;
                let mut table = BTreeMap::new();
                for r in records {
                    if r.values.len() != self.embedding_dim {
                        return Err(invalid(
                            "embedding.path",
                            format!("`{}` has dimension {}, expected {}", r.task_id, r.values.len(), self.embedding_dim),
                        ));
                    }
                    table.insert(r.task_id, r.values);
                }
                EmbeddingSource::Table(table)
            }
        };
        let settings = RunSettings {
            architecture: self.architecture.clone(),
            embedding_dim: self.embedding_dim,
            lambda: self.lambda,
            norm_bound: self.norm_bound,
            dictionary_passes: self.dictionary_passes,
            solver: SolverConfig {
                max_iter: self.solver.max_iter,
                kkt_tol: self.solver.kkt_tol,
                sweep_tol: self.solver.sweep_tol,
            },
            budget: self.budget.clone(),
            optimizer: self.optimizer.clone(),
            ablation: self.ablation.clone(),
            embedding,
            seed: self.seed,
        };
        settings.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(settings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_round_trips_through_json() {
        let cfg = RunConfig::desk();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(cfg.tasks().unwrap().len(), 6);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::desk().to_json()).unwrap();
        v["lamda"] = serde_json::json!(0.1);
        let err = RunConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");

        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::desk().to_json()).unwrap();
        v["budget"]["steps"] = serde_json::json!(3);
        assert!(RunConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn negative_lambda_names_field() {
        let mut cfg = RunConfig::desk();
        cfg.lambda = -1.0;
        let err = cfg.settings().unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn repeat_suffixes_ids() {
        let mut cfg = RunConfig::desk();
        cfg.sequence.repeat = 2;
        let tasks = cfg.tasks().unwrap();
        assert_eq!(tasks.len(), 12);
        assert_eq!(tasks[7].description.task_id, "p1-v0#2");
        assert_eq!(tasks[7].kind, tasks[1].kind);
    }

    #[test]
    fn explicit_task_list_parses() {
        let text = r#"{
            "description": {"task_id": "a", "text": "push the puck"},
            "primitive": 1,
            "kind": {
                "type": "supervised",
                "input_dim": 4, "output_dim": 2, "family": "linear",
                "generator_seed": 5, "variant": 0, "variant_scale": 0.1,
                "margin": 0.05, "eval_points": 8
            }
        }"#;
        let t: TaskSpec = serde_json::from_str(text).unwrap();
        let typo = text.replace("\"margin\"", "\"margn\"");
        assert!(serde_json::from_str::<TaskSpec>(&typo).is_err());
        let mut cfg = RunConfig::desk();
        cfg.sequence.preset = None;
        cfg.sequence.tasks = Some(vec![t]);
        assert_eq!(cfg.tasks().unwrap()[0].primitive, 1);
    }

    #[test]
    fn exactly_one_sequence_source() {
        let mut cfg = RunConfig::desk();
        cfg.sequence.tasks = Some(vec![]);
        assert!(cfg.tasks().is_err());
        cfg.sequence.preset = Some("nope".into());
        cfg.sequence.tasks = None;
        assert!(cfg.tasks().unwrap_err().to_string().contains("nope"));
    }

    #[test]
    fn grid_preset_matches_its_architecture() {
        let tasks = preset("grid").unwrap();
        validate_sequence(&tasks, 9, 4).unwrap();
    }
}
