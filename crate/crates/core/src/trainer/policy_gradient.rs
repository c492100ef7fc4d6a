//! Reward-weighted likelihood-ratio learner for the episodic tasks.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{gate_gradients, gates_of, AccumulatedMask, MetaPolicy, PromptSet};
use crate::rng::Rng;
use crate::tasks::{EpisodicTask, Environment};

use super::Phase;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient of `−advantage · log π(action)` w.r.t. the logits:
/// `−advantage · (onehot(action) − π)`.
pub fn likelihood_ratio_grad(logits: &[f64], action: usize, advantage: f64) -> Vec<f64> {
    let probs = softmax(logits);
    probs
        .iter()
        .enumerate()
        .map(|(a, p)| {
            let indicator = if a == action { 1.0 } else { 0.0 };
            -advantage * (indicator - p)
        })
        .collect()
}

/// Moving-average reward baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub value: f64,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Self { value: 0.0, decay }
    }

    fn observe(&mut self, mean_return: f64) {
        self.value += self.decay * (mean_return - self.value);
    }
}

fn action_logits(out: &Matrix, row: usize, actions: usize) -> &[f64] {
    &out.row(row)[..actions]
}

fn sample(probs: &[f64], r: &mut Rng) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgStats {
    pub mean_return: f64,
    pub steps: usize,
}

/// Collects one batch of episodes with the masked stochastic policy, forms
/// discounted returns, and applies one likelihood-ratio update (gated
/// weights in the θ phase, straight-through prompts in the α phase).
#[allow(clippy::too_many_arguments)]
pub fn policy_gradient_step(
    policy: &mut MetaPolicy,
    prompts: &mut PromptSet,
    accumulated: &AccumulatedMask,
    env: &Environment,
    task: &EpisodicTask,
    baseline: &mut Baseline,
    phase: Phase,
    lr: f64,
    r: &mut Rng,
) -> Result<PgStats> {
    let gates = gates_of(&prompts.masks());
    let input_dim = policy.input_dim();
    let actions = env.action_count();

    let mut observations: Vec<Vec<f64>> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut returns: Vec<f64> = Vec::new();
    let mut episode_returns = 0.0;

    for _ in 0..task.episodes_per_batch {
        let mut state = env.reset(r);
        let mut rewards = Vec::new();
        for _ in 0..task.horizon {
            let obs = env.observe(state, input_dim);
            let x = Matrix::from_vec(1, input_dim, obs.clone())?;
            let out = policy.predict(&gates, &x)?;
            let probs = softmax(action_logits(&out, 0, actions));
            let a = sample(&probs, r);
            let step = env.step(state, a);
            observations.push(obs);
            chosen.push(a);
            rewards.push(step.reward);
            state = step.state;
            if step.done {
                break;
            }
        }
        let mut g = 0.0;
        let mut discounted = vec![0.0; rewards.len()];
        for h in (0..rewards.len()).rev() {
            g = rewards[h] + task.gamma * g;
            discounted[h] = g;
        }
        episode_returns += discounted[0];
        returns.extend(discounted);
    }
    if returns.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("returns"));
    }

    let n = observations.len();
    let mut x = Matrix::zeros(n, input_dim);
    for (b, obs) in observations.iter().enumerate() {
        x.row_mut(b).copy_from_slice(obs);
    }
    let (out, cache) = policy.forward(&gates, &x)?;
    let mut loss_grad = Matrix::zeros(n, policy.output_dim());
    let scale = 1.0 / task.episodes_per_batch as f64;
    for b in 0..n {
        let advantage = returns[b] - baseline.value;
        if advantage == 0.0 {
            continue;
        }
        let g = likelihood_ratio_grad(action_logits(&out, b, actions), chosen[b], advantage);
        for (dst, v) in loss_grad.row_mut(b).iter_mut().zip(g) {
            *dst = scale * v;
        }
    }

    match phase {
        Phase::Theta => {
            let raw = policy.backward_theta(&cache, &loss_grad)?;
            let gated = gate_gradients(&raw, accumulated)?;
            policy.apply_update(&gated, lr)?;
        }
        Phase::Alpha => {
            let g = policy.backward_alpha(prompts, &cache, &loss_grad)?;
            prompts.apply_gradient(&g, lr)?;
        }
    }
    let mean_return = episode_returns / task.episodes_per_batch as f64;
    baseline.observe(mean_return);
    Ok(PgStats { mean_return, steps: n })
}

/// Deterministic success: probability of the best arm for bandits, else the
/// fraction of start cells from which the greedy policy reaches the goal
/// within the horizon.
pub fn episodic_success(policy: &MetaPolicy, gates: &[Vec<f64>], env: &Environment, horizon: usize) -> Result<f64> {
    let input_dim = policy.input_dim();
    let actions = env.action_count();
    if let Some(best) = env.best_arm() {
        let x = Matrix::from_vec(1, input_dim, env.observe(0, input_dim))?;
        let out = policy.predict(gates, &x)?;
        return Ok(softmax(action_logits(&out, 0, actions))[best]);
    }
    let starts = env.start_states();
    let mut x = Matrix::zeros(env.observation_dim(), input_dim);
    for s in 0..env.observation_dim() {
        x.row_mut(s).copy_from_slice(&env.observe(s, input_dim));
    }
    let out = policy.predict(gates, &x)?;
    let greedy: Vec<usize> = (0..env.observation_dim())
        .map(|s| {
            let logits = action_logits(&out, s, actions);
            let mut best = 0;
            for (a, v) in logits.iter().enumerate() {
                if *v > logits[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    let mut reached = 0usize;
    for &s0 in &starts {
        let mut s = s0;
        for _ in 0..horizon {
            let step = env.step(s, greedy[s]);
            s = step.state;
            if step.done {
                reached += 1;
                break;
            }
        }
    }
    Ok(reached as f64 / starts.len() as f64)
}
