use alloc::vec;
use alloc::vec::Vec;

use super::{LassoProblem, LassoSolution, SolverConfig, ZERO_ATOM_EPS};
use crate::error::Result;
use crate::linalg::{dot, Matrix};

/// Relative pivot below which a new atom is treated as collinear with the
/// active set and excluded.
const PIVOT_EPS: f64 = 1e-12;
const DENOM_EPS: f64 = 1e-12;
/// Join steps this far below zero (round-off) are clamped to zero.
const JOIN_SLACK: f64 = 1e-14;
const REJOIN_EPS: f64 = 1e-10;

/// Lower-triangular Cholesky factor of the active Gram block, grown one row
/// at a time.
#[derive(Debug, Default)]
struct ActiveCholesky {
    rows: Vec<Vec<f64>>,
}

impl ActiveCholesky {
    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Appends atom `j`. Returns `false` if it is (numerically) in the span
    /// of the active atoms.
    fn push(&mut self, gram: &Matrix, active: &[usize], j: usize) -> bool {
        let n = self.len();
        let mut v = Vec::with_capacity(n + 1);
        for i in 0..n {
            let row = &self.rows[i];
            let s = gram[(active[i], j)] - dot(&row[..i], &v[..i]);
            v.push(s / row[i]);
        }
        let diag = gram[(j, j)];
        let pivot = diag - dot(&v, &v);
        if !(pivot > PIVOT_EPS * diag) {
            return false;
        }
        v.push(libm::sqrt(pivot));
        self.rows.push(v);
        true
    }

    fn rebuild(gram: &Matrix, active: &[usize]) -> (Self, Vec<usize>) {
        let mut chol = Self::default();
        let mut kept = Vec::with_capacity(active.len());
        for &j in active {
            if chol.push(gram, &kept, j) {
                kept.push(j);
            }
        }
        (chol, kept)
    }

    /// Solves `L Lᵀ x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.rows[i];
            y[i] = (b[i] - dot(&row[..i], &y[..i])) / row[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for r in i + 1..n {
                s -= self.rows[r][i] * x[r];
            }
            x[i] = s / self.rows[i][i];
        }
        x
    }
}

enum Event {
    End,
    Join(usize),
    Drop(usize),
}

#[inline]
fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// LARS homotopy for the lasso, following the regularization path from
/// `‖Dᵀe‖∞` down to `λ`.
///
/// Atoms enter when their absolute correlation with the residual reaches the
/// common active level and leave when their coefficient crosses zero. Ties
/// resolve to the lowest atom index. Zero-norm atoms never enter. After the
/// path reaches `λ` the active coefficients are re-solved in closed form for
/// the final sign pattern, which removes drift accumulated along the path.
pub fn solve_lasso_lars(problem: &LassoProblem<'_>, config: &SolverConfig) -> Result<LassoSolution> {
    let d = problem.dictionary();
    let k = d.cols();
    let lambda = problem.lambda();
    let gram = d.gram();
    let xty = d.tr_matvec(problem.target());
    let max_iter = config.iteration_limit(k);

    let mut alpha = vec![0.0; k];
    let mut excluded: Vec<bool> = (0..k).map(|j| gram[(j, j)] <= ZERO_ATOM_EPS).collect();
    let mut in_active = vec![false; k];
    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut chol = ActiveCholesky::default();
    let mut corr = xty.clone();

    let strongest = |corr: &[f64], excluded: &[bool], in_active: &[bool]| {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..k {
            if excluded[j] || in_active[j] {
                continue;
            }
            let c = corr[j].abs();
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        best
    };

    let Some((first, c_max)) = strongest(&corr, &excluded, &in_active) else {
        return Ok(LassoSolution::new(problem, alpha, 0, true));
    };
    if c_max <= lambda {
        return Ok(LassoSolution::new(problem, alpha, 0, true));
    }
    let mut level = c_max;
    let mut pending = Some(first);
    let mut last_dropped: Option<usize> = None;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        if let Some(j) = pending.take() {
            if chol.push(&gram, &active, j) {
                active.push(j);
                signs.push(sign(corr[j]));
                in_active[j] = true;
            } else {
                excluded[j] = true;
            }
        }
        if active.is_empty() {
            // Every candidate so far was degenerate; restart from the next one.
            match strongest(&corr, &excluded, &in_active) {
                Some((j, c)) if c > lambda => {
                    level = c;
                    pending = Some(j);
                    continue;
                }
                _ => {
                    converged = true;
                    break;
                }
            }
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let w = chol.solve(&signs);
        let mut event = Event::End;
        let mut gamma = level - lambda;

        for j in 0..k {
            if excluded[j] || in_active[j] {
                continue;
            }
            // a just-dropped atom sits on the boundary; only a strictly
            // positive step may bring it back
            let floor = if last_dropped == Some(j) { REJOIN_EPS * level } else { 0.0 };
            let mut a = 0.0;
            for (i, &ja) in active.iter().enumerate() {
                a += gram[(j, ja)] * w[i];
            }
            for (num, den) in [(level - corr[j], 1.0 - a), (level + corr[j], 1.0 + a)] {
                if den > DENOM_EPS {
                    let g = num / den;
                    if g > -JOIN_SLACK && (floor == 0.0 || g > floor) {
                        let g = g.max(0.0);
                        if g < gamma {
                            gamma = g;
                            event = Event::Join(j);
                        }
                    }
                }
            }
        }
        for (i, &j) in active.iter().enumerate() {
            if w[i] != 0.0 {
                let g = -alpha[j] / w[i];
                if g > 0.0 && g < gamma {
                    gamma = g;
                    event = Event::Drop(i);
                }
            }
        }

        for (i, &j) in active.iter().enumerate() {
            alpha[j] += gamma * w[i];
        }
        level -= gamma;
        last_dropped = None;

        match event {
            Event::End => {
                converged = true;
                break;
            }
            Event::Join(j) => pending = Some(j),
            Event::Drop(i) => {
                let j = active.remove(i);
                signs.remove(i);
                alpha[j] = 0.0;
                in_active[j] = false;
                last_dropped = Some(j);
                let (rebuilt, kept) = ActiveCholesky::rebuild(&gram, &active);
                if kept.len() != active.len() {
                    // Only possible through round-off; keep the factor consistent.
                    signs = kept.iter().map(|&j| sign(alpha[j])).collect();
                    for &j in &active {
                        if !kept.contains(&j) {
                            in_active[j] = false;
                            alpha[j] = 0.0;
                        }
                    }
                    active = kept;
                }
                chol = rebuilt;
            }
        }
        for j in 0..k {
            let mut s = xty[j];
            for &ja in &active {
                s -= gram[(j, ja)] * alpha[ja];
            }
            corr[j] = s;
        }
    }

    if converged && !active.is_empty() {
        refit(&chol, &active, &signs, &xty, lambda, &mut alpha);
    }
    Ok(LassoSolution::new(problem, alpha, iterations, converged))
}

/// Closed-form lasso coefficients for a fixed support and sign pattern:
/// `α_A = G_AA⁻¹ (Dᵀ_A e − λ s_A)`. Applied only if every sign is preserved.
fn refit(
    chol: &ActiveCholesky,
    active: &[usize],
    signs: &[f64],
    xty: &[f64],
    lambda: f64,
    alpha: &mut [f64],
) {
    let rhs: Vec<f64> = active
        .iter()
        .zip(signs)
        .map(|(&j, &s)| xty[j] - lambda * s)
        .collect();
    let exact = chol.solve(&rhs);
    let consistent = exact
        .iter()
        .zip(signs)
        .all(|(&a, &s)| a.is_finite() && a * s > 0.0);
    if consistent {
        for (&j, &a) in active.iter().zip(&exact) {
            alpha[j] = a;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::rng;
    use crate::sparse_coding::{solve_lasso_cd, LassoProblem};

    fn unit_columns(m: usize, k: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, "lars-test", 0);
        let mut d = Matrix::from_fn(m, k, |_, _| rng::normal(&mut r));
        for j in 0..k {
            let n = d.column_norm(j);
            let col: Vec<f64> = d.column(j).iter().map(|v| v / n).collect();
            d.set_column(j, &col);
        }
        d
    }

    #[test]
    fn zero_target_gives_zero_solution() {
        let d = unit_columns(3, 5, 1);
        let p = LassoProblem::new(&d, &[0.0; 3], 0.1).unwrap();
        let s = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        assert!(s.coefficients.iter().all(|&a| a == 0.0));
        assert!(s.support.is_empty());
        assert!(s.converged);
    }

    #[test]
    fn large_lambda_gives_zero_solution() {
        let d = unit_columns(4, 7, 2);
        let e = [0.3, -0.1, 0.7, 0.2];
        let cmax = d.tr_matvec(&e).iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let p = LassoProblem::new(&d, &e, cmax).unwrap();
        let s = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        assert!(s.support.is_empty());
    }

    #[test]
    fn matches_coordinate_descent_on_small_problem() {
        let d = unit_columns(3, 5, 3);
        let e = [0.8, -0.4, 0.3];
        let p = LassoProblem::new(&d, &e, 0.1).unwrap();
        let lars = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        let oracle = SolverConfig {
            max_iter: Some(1_000_000),
            sweep_tol: 1e-14,
            ..SolverConfig::default()
        };
        let cd = solve_lasso_cd(&p, &oracle).unwrap();
        assert!(p.duality_gap(&cd.coefficients) < 1e-10);
        for (a, b) in lars.coefficients.iter().zip(&cd.coefficients) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(p.kkt_violation(&lars.coefficients) < 1e-8);
        assert!(lars.support.len() <= 3);
    }

    #[test]
    fn zero_norm_atoms_never_enter() {
        let mut d = unit_columns(3, 4, 4);
        d.set_column(1, &[0.0, 0.0, 0.0]);
        let p = LassoProblem::new(&d, &[1.0, 0.5, -0.5], 1e-3).unwrap();
        let s = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        assert_eq!(s.coefficients[1], 0.0);
        assert!(p.kkt_violation(&s.coefficients) < 1e-8);
    }

    #[test]
    fn duplicate_atoms_resolve_to_lowest_index() {
        let d = Matrix::from_rows(&[&[1.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let p = LassoProblem::new(&d, &[1.0, 0.2], 0.05).unwrap();
        let s = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        assert!(s.coefficients[0] > 0.0);
        assert_eq!(s.coefficients[1], 0.0);
        assert!(p.kkt_violation(&s.coefficients) < 1e-8);
    }

    #[test]
    fn iteration_limit_is_flagged() {
        let d = unit_columns(6, 12, 5);
        let e = [0.4, 0.1, -0.3, 0.5, 0.2, -0.6];
        let p = LassoProblem::new(&d, &e, 1e-4).unwrap();
        let cfg = SolverConfig {
            max_iter: Some(1),
            ..SolverConfig::default()
        };
        let s = solve_lasso_lars(&p, &cfg).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn dropped_atom_may_rejoin() {
        // path: join 0, 2, 1, 3, then atom 1 leaves and has to come back
        // with the opposite sign before λ is reached
        #[rustfmt::skip]
        let d = Matrix::from_vec(4, 4, alloc::vec![
            -0.4943809894646982, 0.20899334871547554, 0.4455660647975925, 0.49279630442939304,
            0.6663623629120031, -0.0158406875436351, 0.5145503892808416, -0.42296653938948053,
            -0.5039786092375446, 0.8041014813251581, -0.723329538084165, 0.6162176654010754,
            0.2399045643192894, -0.5563197466758867, 0.11620309000482971, -0.44556357318038053,
        ]).unwrap();
        let e = [-0.10625426382456167, 0.7397301705115719, -0.5473190603940242, -0.3767640539958977];
        let p = LassoProblem::new(&d, &e, 1e-3).unwrap();
        let s = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        assert!(p.kkt_violation(&s.coefficients) < 1e-9);
        assert!(s.coefficients[1] < 0.0);
    }

    #[test]
    fn deterministic() {
        let d = unit_columns(5, 11, 6);
        let e = [0.4, 0.1, -0.3, 0.5, 0.2];
        let p = LassoProblem::new(&d, &e, 1e-3).unwrap();
        let a = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        let b = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        let bits = |s: &LassoSolution| s.coefficients.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
