use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetFamily {
    /// Input-independent target vector.
    Constant,
    /// `y = Wx + b`
    Linear,
    /// `y = V tanh(Ux + c)` with `hidden` teacher units.
    Mlp { hidden: usize },
}

/// Regression task over inputs drawn uniformly from `[-1, 1]^d`.
///
/// The primitive's target function comes from `generator_seed`; each variant
/// adds a seeded perturbation of relative size `variant_scale` to every
/// parameter. An evaluation point counts as solved when the mean squared
/// error over outputs is below `margin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisedTask {
    pub input_dim: usize,
    pub output_dim: usize,
    pub family: TargetFamily,
    pub generator_seed: u64,
    pub variant: u64,
    pub variant_scale: f64,
    pub margin: f64,
    pub eval_points: usize,
}

impl SupervisedTask {
    pub fn validate(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        if self.input_dim != input_dim {
            return Err(Error::invalid(
                "input_dim",
                alloc::format!("task uses {} but the network takes {input_dim}", self.input_dim),
            ));
        }
        if self.output_dim != output_dim {
            return Err(Error::invalid(
                "output_dim",
                alloc::format!("task uses {} but the network emits {output_dim}", self.output_dim),
            ));
        }
        if !(self.variant_scale >= 0.0) || !self.variant_scale.is_finite() {
            return Err(Error::invalid("variant_scale", "must be finite and non-negative"));
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::invalid("margin", "must be positive"));
        }
        if self.eval_points == 0 {
            return Err(Error::invalid("eval_points", "must be positive"));
        }
        if let TargetFamily::Mlp { hidden: 0 } = self.family {
            return Err(Error::invalid("family.mlp.hidden", "must be positive"));
        }
        Ok(())
    }

    pub fn target(&self) -> TargetFunction {
        TargetFunction::new(self)
    }

    /// Fixed probe set; identical on every call.
    pub fn eval_set(&self) -> (Matrix, Matrix) {
        let mut r = rng::stream(self.generator_seed, "eval-set", self.variant);
        self.target().sample(&mut r, self.eval_points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetFunction {
    family: TargetFamily,
    input_dim: usize,
    output_dim: usize,
    first: Matrix,
    first_bias: Vec<f64>,
    second: Matrix,
    second_bias: Vec<f64>,
}

fn perturbed(base: &mut Rng, noise: &mut Rng, scale: f64, std: f64) -> f64 {
    let b = rng::normal(base);
    let n = rng::normal(noise);
    std * (b + scale * n)
}

impl TargetFunction {
    fn new(task: &SupervisedTask) -> Self {
        let d = task.input_dim;
        let o = task.output_dim;
        let s = task.variant_scale;
        let mut base = rng::stream(task.generator_seed, "target-base", 0);
        let mut noise = rng::stream(task.generator_seed, "target-variant", task.variant);
        let mut p = |std: f64| perturbed(&mut base, &mut noise, s, std);
        let sd = libm::sqrt(d as f64);
        match task.family {
            TargetFamily::Constant => {
                let bias = (0..o).map(|_| p(0.5)).collect();
                Self {
                    family: task.family.clone(),
                    input_dim: d,
                    output_dim: o,
                    first: Matrix::zeros(0, d),
                    first_bias: Vec::new(),
                    second: Matrix::zeros(o, 0),
                    second_bias: bias,
                }
            }
            TargetFamily::Linear => {
                let w = Matrix::from_fn(o, d, |_, _| p(1.0 / sd));
                let bias = (0..o).map(|_| p(0.3)).collect();
                Self {
                    family: task.family.clone(),
                    input_dim: d,
                    output_dim: o,
                    first: Matrix::zeros(0, d),
                    first_bias: Vec::new(),
                    second: w,
                    second_bias: bias,
                }
            }
            TargetFamily::Mlp { hidden } => {
                let u = Matrix::from_fn(hidden, d, |_, _| p(1.5 / sd));
                let c = (0..hidden).map(|_| p(0.3)).collect();
                let v = Matrix::from_fn(o, hidden, |_, _| p(1.0 / libm::sqrt(hidden as f64)));
                let bias = (0..o).map(|_| p(0.2)).collect();
                Self {
                    family: task.family.clone(),
                    input_dim: d,
                    output_dim: o,
                    first: u,
                    first_bias: c,
                    second: v,
                    second_bias: bias,
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self.family {
            TargetFamily::Constant => self.second_bias.clone(),
            TargetFamily::Linear => (0..self.output_dim)
                .map(|i| dot(self.second.row(i), x) + self.second_bias[i])
                .collect(),
            TargetFamily::Mlp { .. } => {
                let h: Vec<f64> = (0..self.first.rows())
                    .map(|i| libm::tanh(dot(self.first.row(i), x) + self.first_bias[i]))
                    .collect();
                (0..self.output_dim)
                    .map(|i| dot(self.second.row(i), &h) + self.second_bias[i])
                    .collect()
            }
        }
    }

    /// `n` uniform inputs and their targets.
    pub fn sample(&self, r: &mut Rng, n: usize) -> (Matrix, Matrix) {
        let x = Matrix::from_fn(n, self.input_dim, |_, _| r.random_range(-1.0..=1.0));
        let mut y = Matrix::zeros(n, self.output_dim);
        for b in 0..n {
            let t = self.eval(x.row(b));
            y.row_mut(b).copy_from_slice(&t);
        }
        (x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(family: TargetFamily, variant: u64) -> SupervisedTask {
        SupervisedTask {
            input_dim: 3,
            output_dim: 2,
            family,
            generator_seed: 42,
            variant,
            variant_scale: 0.2,
            margin: 0.01,
            eval_points: 8,
        }
    }

    #[test]
    fn eval_set_is_fixed() {
        let t = task(TargetFamily::Mlp { hidden: 4 }, 0);
        assert_eq!(t.eval_set(), t.eval_set());
        let other = task(TargetFamily::Mlp { hidden: 4 }, 1);
        assert_ne!(t.eval_set().1, other.eval_set().1);
    }

    #[test]
    fn constant_ignores_input() {
        let f = task(TargetFamily::Constant, 0).target();
        assert_eq!(f.eval(&[0.0, 0.0, 0.0]), f.eval(&[1.0, -1.0, 0.5]));
    }

    #[test]
    fn variants_stay_near_primitive() {
        let a = task(TargetFamily::Linear, 0).target();
        let b = task(TargetFamily::Linear, 1).target();
        let far = SupervisedTask {
            generator_seed: 7,
            ..task(TargetFamily::Linear, 0)
        }
        .target();
        let x = [0.3, -0.5, 0.9];
        let dist = |p: &TargetFunction, q: &TargetFunction| {
            p.eval(&x).iter().zip(q.eval(&x)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()
        };
        assert!(dist(&a, &b) < dist(&a, &far));
    }

    #[test]
    fn validation() {
        let t = task(TargetFamily::Linear, 0);
        assert!(t.validate(3, 2).is_ok());
        assert!(t.validate(4, 2).is_err());
        let bad = SupervisedTask { margin: 0.0, ..t };
        assert!(bad.validate(3, 2).is_err());
    }
}
