//! Lasso sparse coding of an embedding against a dictionary.
//!
//! Minimizes `½‖e − Dα‖² + λ‖α‖₁` over `α`. [`solve_lasso_lars`] is the
//! production solver (LARS homotopy with an incrementally grown Cholesky
//! factor of the active Gram block); [`solve_lasso_cd`] is an independent
//! cyclic coordinate-descent solver used to cross-check it.
//!
//! Dictionary columns are used as given; keeping atoms bounded is the
//! dictionary's job.

mod cd;
mod lars;

use alloc::vec::Vec;

pub use cd::solve_lasso_cd;
pub use lars::solve_lasso_lars;

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::network::Mask;

/// Atoms whose squared norm is at or below this are never activated.
pub const ZERO_ATOM_EPS: f64 = 1e-24;

#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    dictionary: &'a Matrix,
    target: &'a [f64],
    lambda: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(dictionary: &'a Matrix, target: &'a [f64], lambda: f64) -> Result<Self> {
        if dictionary.cols() == 0 {
            return Err(Error::invalid("dictionary", "needs at least one atom"));
        }
        if target.len() != dictionary.rows() {
            return Err(Error::shape(
                "lasso target",
                dictionary.rows(),
                target.len(),
            ));
        }
        if !lambda.is_finite() {
            return Err(Error::NonFinite("lambda"));
        }
        if lambda < 0.0 {
            return Err(Error::invalid("lambda", "must be non-negative"));
        }
        ensure_finite(dictionary.as_slice(), "dictionary")?;
        ensure_finite(target, "target")?;
        Ok(Self {
            dictionary,
            target,
            lambda,
        })
    }

    pub fn dictionary(&self) -> &Matrix {
        self.dictionary
    }

    pub fn target(&self) -> &[f64] {
        self.target
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn atoms(&self) -> usize {
        self.dictionary.cols()
    }

    /// `Dᵀ(e − Dα)`
    pub fn correlations(&self, alpha: &[f64]) -> Vec<f64> {
        let residual = self.residual(alpha);
        self.dictionary.tr_matvec(&residual)
    }

    pub fn residual(&self, alpha: &[f64]) -> Vec<f64> {
        let fit = self.dictionary.matvec(alpha);
        self.target.iter().zip(&fit).map(|(e, f)| e - f).collect()
    }

    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let r = self.residual(alpha);
        0.5 * dot(&r, &r) + self.lambda * alpha.iter().map(|a| a.abs()).sum::<f64>()
    }

    /// Largest violation of the lasso optimality conditions at `alpha`.
    pub fn kkt_violation(&self, alpha: &[f64]) -> f64 {
        let corr = self.correlations(alpha);
        let mut worst: f64 = 0.0;
        for (j, (&a, &c)) in alpha.iter().zip(&corr).enumerate() {
            let v = if a > 0.0 {
                (c - self.lambda).abs()
            } else if a < 0.0 {
                (c + self.lambda).abs()
            } else if self.dictionary.column_norm(j) == 0.0 {
                0.0
            } else {
                (c.abs() - self.lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Primal objective minus the value of the scaled-residual dual point.
    pub fn duality_gap(&self, alpha: &[f64]) -> f64 {
        let r = self.residual(alpha);
        let corr = self.dictionary.tr_matvec(&r);
        let cmax = corr.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let scale = if cmax > self.lambda {
            self.lambda / cmax
        } else {
            1.0
        };
        let primal = self.objective(alpha);
        let mut diff_sq = 0.0;
        for (e, ri) in self.target.iter().zip(&r) {
            let d = e - scale * ri;
            diff_sq += d * d;
        }
        let dual = 0.5 * dot(self.target, self.target) - 0.5 * diff_sq;
        primal - dual
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// LARS steps or coordinate-descent sweeps; `None` means `10 * k`.
    pub max_iter: Option<usize>,
    pub kkt_tol: f64,
    /// Coordinate descent stops once no coordinate moves more than this in a sweep.
    pub sweep_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: None,
            kkt_tol: 1e-8,
            sweep_tol: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn iteration_limit(&self, atoms: usize) -> usize {
        self.max_iter.unwrap_or(10 * atoms).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coefficients: Vec<f64>,
    pub objective_value: f64,
    /// Indices of nonzero coefficients, ascending.
    pub support: Vec<usize>,
    pub iterations: usize,
    /// `false` when the iteration limit was hit before the stopping rule.
    pub converged: bool,
}

impl LassoSolution {
    pub(crate) fn new(
        problem: &LassoProblem<'_>,
        coefficients: Vec<f64>,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let support = coefficients
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            objective_value: problem.objective(&coefficients),
            coefficients,
            support,
            iterations,
            converged,
        }
    }
}

/// Step function: 1 where `α > 0`, else 0.
pub fn binarize(alpha: &[f64]) -> Mask {
    alpha.iter().map(|&a| a > 0.0).collect()
}

#[inline]
pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn binarize_step_function() {
        assert_eq!(binarize(&[0.5, -0.2, 0.0]).to_vec(), vec![true, false, false]);
        assert_eq!(binarize(&[0.0; 4]).count(), 0);
        assert_eq!(binarize(&[0.1, 3.0, 1e-300]).count(), 3);
    }

    #[test]
    fn problem_validation() {
        let d = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(LassoProblem::new(&d, &[1.0], 0.1).is_err());
        assert!(LassoProblem::new(&d, &[1.0, 0.0], -0.1).is_err());
        assert!(matches!(
            LassoProblem::new(&d, &[f64::NAN, 0.0], 0.1),
            Err(Error::NonFinite(_))
        ));
        let empty = Matrix::zeros(2, 0);
        assert!(LassoProblem::new(&empty, &[1.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn duality_gap_vanishes_at_optimum() {
        // Orthonormal dictionary: solution is the soft-thresholded target.
        let d = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let p = LassoProblem::new(&d, &[2.0, -0.3], 0.5).unwrap();
        let alpha = [1.5, 0.0];
        assert!(p.duality_gap(&alpha).abs() < 1e-12);
        assert!(p.kkt_violation(&alpha) < 1e-12);
        assert!(p.duality_gap(&[1.0, 0.0]) > 0.0);
    }
}
