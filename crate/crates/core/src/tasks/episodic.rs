use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSpec {
    /// Four-action grid; reaching `goal` pays `goal_reward` and ends the
    /// episode, every other step pays `step_reward`.
    GridWorld {
        width: usize,
        height: usize,
        goal: (usize, usize),
        #[serde(default = "unit")]
        goal_reward: f64,
        #[serde(default)]
        step_reward: f64,
    },
    /// Single-state bandit with deterministic arm rewards.
    Bandit { arm_rewards: Vec<f64> },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodicTask {
    pub env: EnvSpec,
    pub gamma: f64,
    pub horizon: usize,
    pub episodes_per_batch: usize,
}

impl EpisodicTask {
    pub fn validate(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma", "must lie in [0, 1)"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.episodes_per_batch == 0 {
            return Err(Error::invalid("episodes_per_batch", "must be positive"));
        }
        let env = Environment::new(&self.env)?;
        if env.observation_dim() > input_dim {
            return Err(Error::invalid(
                "env",
                alloc::format!("observation needs {} inputs, network has {input_dim}", env.observation_dim()),
            ));
        }
        if env.action_count() > output_dim {
            return Err(Error::invalid(
                "env",
                alloc::format!("{} actions but the network emits {output_dim}", env.action_count()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub reward: f64,
    pub done: bool,
}

/// Runtime view of an [`EnvSpec`]. States are flat indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    spec: EnvSpec,
}

impl Environment {
    pub fn new(spec: &EnvSpec) -> Result<Self> {
        match spec {
            EnvSpec::GridWorld {
                width,
                height,
                goal,
                goal_reward,
                step_reward,
            } => {
                if *width == 0 || *height == 0 || width * height < 2 {
                    return Err(Error::invalid("grid", "needs at least two cells"));
                }
                if goal.0 >= *width || goal.1 >= *height {
                    return Err(Error::invalid("goal", "outside the grid"));
                }
                if !goal_reward.is_finite() || !step_reward.is_finite() {
                    return Err(Error::NonFinite("reward"));
                }
            }
            EnvSpec::Bandit { arm_rewards } => {
                if arm_rewards.is_empty() {
                    return Err(Error::invalid("arm_rewards", "need at least one arm"));
                }
                if arm_rewards.iter().any(|r| !r.is_finite()) {
                    return Err(Error::NonFinite("arm_rewards"));
                }
            }
        }
        Ok(Self { spec: spec.clone() })
    }

    pub fn observation_dim(&self) -> usize {
        match &self.spec {
            EnvSpec::GridWorld { width, height, .. } => width * height,
            EnvSpec::Bandit { .. } => 1,
        }
    }

    pub fn action_count(&self) -> usize {
        match &self.spec {
            EnvSpec::GridWorld { .. } => 4,
            EnvSpec::Bandit { arm_rewards } => arm_rewards.len(),
        }
    }

    /// One-hot cell encoding (grid) or a constant 1 (bandit), zero-padded.
    pub fn observe(&self, state: usize, input_dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; input_dim];
        match self.spec {
            EnvSpec::GridWorld { .. } => v[state] = 1.0,
            EnvSpec::Bandit { .. } => v[0] = 1.0,
        }
        v
    }

    fn goal_state(&self) -> Option<usize> {
        match &self.spec {
            EnvSpec::GridWorld { width, goal, .. } => Some(goal.1 * width + goal.0),
            EnvSpec::Bandit { .. } => None,
        }
    }

    /// States an episode may start from.
    pub fn start_states(&self) -> Vec<usize> {
        match &self.spec {
            EnvSpec::GridWorld { .. } => {
                let goal = self.goal_state();
                (0..self.observation_dim()).filter(|s| Some(*s) != goal).collect()
            }
            EnvSpec::Bandit { .. } => vec![0],
        }
    }

    pub fn reset(&self, r: &mut Rng) -> usize {
        let starts = self.start_states();
        starts[r.random_range(0..starts.len())]
    }

    pub fn step(&self, state: usize, action: usize) -> Step {
        match &self.spec {
            EnvSpec::GridWorld {
                width,
                height,
                goal_reward,
                step_reward,
                ..
            } => {
                let (mut x, mut y) = (state % width, state / width);
                match action {
                    0 => y = y.saturating_sub(1),
                    1 => y = (y + 1).min(height - 1),
                    2 => x = x.saturating_sub(1),
                    _ => x = (x + 1).min(width - 1),
                }
                let next = y * width + x;
                if Some(next) == self.goal_state() {
                    Step {
                        state: next,
                        reward: *goal_reward,
                        done: true,
                    }
                } else {
                    Step {
                        state: next,
                        reward: *step_reward,
                        done: false,
                    }
                }
            }
            EnvSpec::Bandit { arm_rewards } => Step {
                state: 0,
                reward: arm_rewards[action],
                done: true,
            },
        }
    }

    pub fn is_bandit(&self) -> bool {
        matches!(self.spec, EnvSpec::Bandit { .. })
    }

    pub fn best_arm(&self) -> Option<usize> {
        match &self.spec {
            EnvSpec::Bandit { arm_rewards } => {
                let mut best = 0;
                for (i, r) in arm_rewards.iter().enumerate() {
                    if *r > arm_rewards[best] {
                        best = i;
                    }
                }
                Some(best)
            }
            _ => None,
        }
    }
}
