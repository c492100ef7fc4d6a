//! Desk-scale task definitions: supervised regression surrogates and small
//! episodic environments.

mod episodic;
mod supervised;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use episodic::{EnvSpec, EpisodicTask, Environment, Step};
pub use supervised::{SupervisedTask, TargetFamily, TargetFunction};

use crate::embedding::TaskDescription;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskKind {
    Supervised(SupervisedTask),
    Episodic(EpisodicTask),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub description: TaskDescription,
    /// Skill family; drives the synthetic embedding provider.
    #[serde(default)]
    pub primitive: u32,
    #[serde(default)]
    pub variant: u32,
    pub kind: TaskKind,
}

impl TaskSpec {
    /// Key used for embedding lookups: the task id without a `#n` repeat
    /// suffix, so repeated occurrences share one stored vector.
    pub fn embedding_key(&self) -> &str {
        let id = self.description.task_id.as_str();
        id.split_once('#').map_or(id, |(base, _)| base)
    }

    pub fn validate(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        if self.description.task_id.is_empty() {
            return Err(Error::invalid("task_id", "must not be empty"));
        }
        if self.description.text.trim().is_empty() {
            return Err(Error::invalid(
                format!("tasks[{}].text", self.description.task_id),
                "must not be empty",
            ));
        }
        match &self.kind {
            TaskKind::Supervised(s) => s.validate(input_dim, output_dim),
            TaskKind::Episodic(e) => e.validate(input_dim, output_dim),
        }
    }
}

pub fn validate_sequence(tasks: &[TaskSpec], input_dim: usize, output_dim: usize) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::invalid("tasks", "sequence is empty"));
    }
    let mut seen: Vec<&str> = Vec::with_capacity(tasks.len());
    for t in tasks {
        t.validate(input_dim, output_dim)?;
        let id = t.description.task_id.as_str();
        if seen.contains(&id) {
            return Err(Error::invalid("task_id", format!("duplicate id `{id}`")));
        }
        seen.push(id);
    }
    Ok(())
}

const SKILLS: [&str; 8] = [
    "push the puck to the goal",
    "open the drawer by its handle",
    "turn the faucet handle",
    "press the button from above",
    "pick up the peg and place it on the shelf",
    "close the window by sliding it",
    "hammer the nail into the board",
    "reach the target position",
];

const MODIFIERS: [&str; 6] = [
    "quickly",
    "while avoiding the wall",
    "from the left side",
    "with a gentle motion",
    "from the right side",
    "after moving around the obstacle",
];

/// Template for generated supervised sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSequence {
    pub primitives: u32,
    pub variants: u32,
    #[serde(default = "one")]
    pub repeat: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub family: TargetFamily,
    /// Relative size of the per-variant perturbation of the primitive's target.
    pub variant_scale: f64,
    pub margin: f64,
    pub eval_points: usize,
    pub task_seed: u64,
}

fn one() -> usize {
    1
}

impl SyntheticSequence {
    /// Tasks ordered variant-major (`p0v0, p1v0, …, p0v1, …`), the whole list
    /// repeated `repeat` times. Repeats carry a `#n` id suffix.
    pub fn build(&self) -> Result<Vec<TaskSpec>> {
        if self.primitives == 0 || self.variants == 0 || self.repeat == 0 {
            return Err(Error::invalid("sequence", "primitives, variants and repeat must be positive"));
        }
        let mut base = Vec::new();
        for v in 0..self.variants {
            for p in 0..self.primitives {
                let text = format!(
                    "{} {}.",
                    SKILLS[p as usize % SKILLS.len()],
                    MODIFIERS[v as usize % MODIFIERS.len()]
                );
                base.push(TaskSpec {
                    description: TaskDescription::new(format!("p{p}-v{v}"), text),
                    primitive: p,
                    variant: v,
                    kind: TaskKind::Supervised(SupervisedTask {
                        input_dim: self.input_dim,
                        output_dim: self.output_dim,
                        family: self.family.clone(),
                        generator_seed: crate::rng::derive_seed(self.task_seed, "primitive", p as u64),
                        variant: v as u64,
                        variant_scale: self.variant_scale,
                        margin: self.margin,
                        eval_points: self.eval_points,
                    }),
                });
            }
        }
        let mut out = Vec::with_capacity(base.len() * self.repeat);
        for r in 0..self.repeat {
            for t in &base {
                let mut t = t.clone();
                if r > 0 {
                    let id: String = format!("{}#{}", t.description.task_id, r + 1);
                    t.description.task_id = id;
                }
                out.push(t);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> SyntheticSequence {
        SyntheticSequence {
            primitives: 3,
            variants: 2,
            repeat: 2,
            input_dim: 4,
            output_dim: 2,
            family: TargetFamily::Linear,
            variant_scale: 0.3,
            margin: 0.01,
            eval_points: 16,
            task_seed: 1,
        }
    }

    #[test]
    fn synthetic_sequence_layout() {
        let tasks = template().build().unwrap();
        assert_eq!(tasks.len(), 12);
        assert_eq!(tasks[1].description.task_id, "p1-v0");
        assert_eq!(tasks[3].description.task_id, "p0-v1");
        assert_eq!(tasks[6].description.task_id, "p0-v0#2");
        assert_eq!(tasks[6].embedding_key(), "p0-v0");
        assert_eq!(tasks[6].kind, tasks[0].kind);
        validate_sequence(&tasks, 4, 2).unwrap();
        assert!(validate_sequence(&tasks, 5, 2).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut tasks = template().build().unwrap();
        tasks[1].description.task_id = tasks[0].description.task_id.clone();
        assert!(validate_sequence(&tasks, 4, 2).is_err());
    }
}
