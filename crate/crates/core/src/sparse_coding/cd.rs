use alloc::vec;

use super::{soft_threshold, LassoProblem, LassoSolution, SolverConfig, ZERO_ATOM_EPS};
use crate::error::Result;
use crate::linalg::axpy;

/// Cyclic coordinate descent with soft-thresholding, in covariance form.
///
/// Sweeps atoms in index order until no coefficient moves by more than
/// `config.sweep_tol` in a full sweep.
pub fn solve_lasso_cd(problem: &LassoProblem<'_>, config: &SolverConfig) -> Result<LassoSolution> {
    let d = problem.dictionary();
    let k = d.cols();
    let lambda = problem.lambda();
    let gram = d.gram();
    let xty = d.tr_matvec(problem.target());
    let max_sweeps = config.iteration_limit(k);

    let mut alpha = vec![0.0; k];
    // gram * alpha, kept in sync with every coordinate move
    let mut fitted = vec![0.0; k];
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..k {
            let gjj = gram[(j, j)];
            if gjj <= ZERO_ATOM_EPS {
                continue;
            }
            let old = alpha[j];
            let rho = xty[j] - fitted[j] + gjj * old;
            let new = soft_threshold(rho, lambda) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                alpha[j] = new;
                axpy(delta, gram.row(j), &mut fitted);
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < config.sweep_tol {
            converged = true;
            break;
        }
    }

    Ok(LassoSolution::new(problem, alpha, sweeps, converged))
}
