//! Per-layer over-complete dictionaries and their block-coordinate update.
//!
//! Each hidden layer owns an `m × k` dictionary whose `k` atoms stand for the
//! layer's neurons. After a task finishes, its optimized prompt `α*` and
//! embedding `e` are folded into running statistics
//! `A = Σ α*α*ᵀ`, `B = Σ e α*ᵀ`, and the dictionary is refit to
//! `min_D ½ Σ‖eᵢ − D αᵢ*‖²` subject to `‖D[j]‖₂ ≤ c`, warm-started from the
//! previous dictionary. No past embeddings or prompts are stored.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::rng;

/// Atoms with `A_jj` at or below this have never been used and are skipped.
pub const DIAG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDictionary {
    atoms: Matrix,
    norm_bound: f64,
    layer_index: usize,
}

impl LayerDictionary {
    /// Seeded standard-normal atoms, each rescaled to norm exactly `c`.
    pub fn init(m: usize, k: usize, c: f64, seed: u64, layer_index: usize) -> Result<Self> {
        if m == 0 || k == 0 {
            return Err(Error::invalid("dictionary shape", "dimensions must be positive"));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid("c", "norm bound must be positive and finite"));
        }
        let mut r = rng::stream(seed, "dictionary", layer_index as u64);
        let mut atoms = Matrix::from_fn(m, k, |_, _| rng::normal(&mut r));
        for j in 0..k {
            let mut col = atoms.column(j);
            let mut n = norm2(&col);
            while n == 0.0 {
                col.iter_mut().for_each(|v| *v = rng::normal(&mut r));
                n = norm2(&col);
            }
            col.iter_mut().for_each(|v| *v *= c / n);
            atoms.set_column(j, &col);
        }
        Ok(Self {
            atoms,
            norm_bound: c,
            layer_index,
        })
    }

    /// Wraps existing atoms, e.g. from a checkpoint.
    pub fn from_parts(atoms: Matrix, norm_bound: f64, layer_index: usize) -> Result<Self> {
        ensure_finite(atoms.as_slice(), "dictionary atoms")?;
        if !(norm_bound > 0.0) {
            return Err(Error::invalid("c", "norm bound must be positive"));
        }
        for j in 0..atoms.cols() {
            if atoms.column_norm(j) > norm_bound + 1e-12 {
                return Err(Error::invalid("dictionary atoms", "atom exceeds norm bound"));
            }
        }
        Ok(Self {
            atoms,
            norm_bound,
            layer_index,
        })
    }

    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn embedding_dim(&self) -> usize {
        self.atoms.rows()
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.cols()
    }

    /// `½ Σᵢ‖eᵢ − D αᵢ‖²` evaluated from the running statistics:
    /// `½(Σ‖eᵢ‖² − 2 tr(DᵀB) + tr(DᵀD A))`.
    pub fn objective(&self, stats: &DictStats) -> f64 {
        let d = &self.atoms;
        let (m, k) = d.shape();
        let mut cross = 0.0;
        for i in 0..m {
            cross += dot(d.row(i), stats.b.row(i));
        }
        let gram = d.gram();
        let mut quad = 0.0;
        for a in 0..k {
            quad += dot(gram.row(a), stats.a.row(a));
        }
        0.5 * (stats.sum_sq_embeddings - 2.0 * cross + quad)
    }

    /// Block-coordinate descent over atoms, `passes` sweeps in index order.
    ///
    /// For atom `j`: `z = (b_j − D a_j)/A_jj + D[j]`, then
    /// `D[j] = min(c/‖z‖, 1) · z`. Atoms with `A_jj ≤ DIAG_EPS` are left alone.
    pub fn update(&mut self, stats: &DictStats, passes: usize) -> Result<()> {
        let (m, k) = self.atoms.shape();
        if stats.a.shape() != (k, k) {
            return Err(Error::shape("stats A", k, stats.a.rows()));
        }
        if stats.b.shape() != (m, k) {
            return Err(Error::shape("stats B", m * k, stats.b.rows() * stats.b.cols()));
        }
        let c = self.norm_bound;
        let mut z = vec![0.0; m];
        for _ in 0..passes {
            for j in 0..k {
                let ajj = stats.a[(j, j)];
                if ajj <= DIAG_EPS {
                    continue;
                }
                for (i, zi) in z.iter_mut().enumerate() {
                    let da = dot(self.atoms.row(i), stats.a.row(j));
                    *zi = (stats.b[(i, j)] - da) / ajj + self.atoms[(i, j)];
                }
                let n = norm2(&z);
                let scale = if n > c { c / n } else { 1.0 };
                for (i, zi) in z.iter().enumerate() {
                    self.atoms[(i, j)] = scale * zi;
                }
            }
        }
        Ok(())
    }
}

/// Running sufficient statistics of `(α*, e)` pairs for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictStats {
    /// `Σ α αᵀ`, `k × k`
    pub a: Matrix,
    /// `Σ e αᵀ`, `m × k`
    pub b: Matrix,
    /// `Σ ‖e‖²`, so the refit objective is available without past embeddings.
    pub sum_sq_embeddings: f64,
    pub task_count: usize,
}

impl DictStats {
    pub fn zeros(m: usize, k: usize) -> Self {
        Self {
            a: Matrix::zeros(k, k),
            b: Matrix::zeros(m, k),
            sum_sq_embeddings: 0.0,
            task_count: 0,
        }
    }

    /// Rank-one updates `A += ααᵀ`, `B += eαᵀ`.
    pub fn accumulate(&mut self, alpha: &[f64], embedding: &[f64]) -> Result<()> {
        let k = self.a.rows();
        let m = self.b.rows();
        if alpha.len() != k {
            return Err(Error::shape("accumulate alpha", k, alpha.len()));
        }
        if embedding.len() != m {
            return Err(Error::shape("accumulate embedding", m, embedding.len()));
        }
        ensure_finite(alpha, "prompt")?;
        ensure_finite(embedding, "embedding")?;
        for (p, &ap) in alpha.iter().enumerate() {
            if ap == 0.0 {
                continue;
            }
            for (q, &aq) in alpha.iter().enumerate() {
                self.a[(p, q)] += ap * aq;
            }
        }
        for (i, &ei) in embedding.iter().enumerate() {
            for (j, &aj) in alpha.iter().enumerate() {
                self.b[(i, j)] += ei * aj;
            }
        }
        self.sum_sq_embeddings += dot(embedding, embedding);
        self.task_count += 1;
        Ok(())
    }
}

/// Mean squared entry change, `‖next − prev‖²_F / (m·k)`.
pub fn dictionary_change(prev: &LayerDictionary, next: &LayerDictionary) -> Result<f64> {
    matrix_change(&prev.atoms, &next.atoms)
}

pub fn matrix_change(prev: &Matrix, next: &Matrix) -> Result<f64> {
    if prev.shape() != next.shape() {
        return Err(Error::shape(
            "dictionary_change",
            prev.rows() * prev.cols(),
            next.rows() * next.cols(),
        ));
    }
    let n = prev.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sq: f64 = prev
        .as_slice()
        .iter()
        .zip(next.as_slice())
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    Ok(sq / n as f64)
}

/// Norms of all atoms.
pub fn atom_norms(dict: &LayerDictionary) -> Vec<f64> {
    (0..dict.atom_count()).map(|j| dict.atoms.column_norm(j)).collect()
}
