//! Continual-learning metrics and structural diagnostics.
//!
//! - `P(t)`: mean success rate over all tasks at evaluation time `t`.
//! - `F`: mean drop from each task's end-of-training success to its
//!   end-of-sequence success.
//! - `G`: mean steps to sustain the success threshold, divided by the
//!   per-task budget `δ`; tasks that never get there count as 1.
//! - mask similarity: per-layer Jaccard index, averaged over hidden layers.
//! - capacity usage: fraction of weights frozen by the accumulated masks.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{weight_is_free, AccumulatedMask, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTable {
    /// Global step of each evaluation column, ascending.
    pub times: Vec<u64>,
    /// `success[i][c]`: success rate of task `i` at column `c`.
    pub success: Vec<Vec<f64>>,
    pub steps_per_task: u64,
}

impl PerformanceTable {
    pub fn new(task_count: usize, steps_per_task: u64) -> Self {
        Self {
            times: Vec::new(),
            success: (0..task_count).map(|_| Vec::new()).collect(),
            steps_per_task,
        }
    }

    pub fn task_count(&self) -> usize {
        self.success.len()
    }

    /// Appends a column; `column[i]` is task `i`'s success rate.
    pub fn push_column(&mut self, time: u64, column: &[f64]) -> Result<()> {
        if column.len() != self.task_count() {
            return Err(Error::shape("performance column", self.task_count(), column.len()));
        }
        if let Some(&last) = self.times.last() {
            if time <= last {
                return Err(Error::invalid("performance column", "times must increase"));
            }
        }
        if column.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("performance column", "success rates must lie in [0, 1]"));
        }
        self.times.push(time);
        for (row, &p) in self.success.iter_mut().zip(column) {
            row.push(p);
        }
        Ok(())
    }

    fn column_at(&self, t: u64) -> Result<usize> {
        self.times
            .binary_search(&t)
            .map_err(|_| Error::invalid("t", alloc::format!("{t} is not on the evaluation grid")))
    }

    pub fn at(&self, task: usize, t: u64) -> Result<f64> {
        let c = self.column_at(t)?;
        Ok(self.success[task][c])
    }
}

/// `P(t) = (1/T) Σᵢ pᵢ(t)`.
pub fn average_performance(table: &PerformanceTable, t: u64) -> Result<f64> {
    let c = table.column_at(t)?;
    let n = table.task_count();
    if n == 0 {
        return Err(Error::invalid("performance table", "no tasks"));
    }
    Ok(table.success.iter().map(|row| row[c]).sum::<f64>() / n as f64)
}

/// `F = (1/T) Σᵢ [pᵢ(i·δ) − pᵢ(T·δ)]`.
pub fn forgetting(table: &PerformanceTable) -> Result<f64> {
    let n = table.task_count();
    if n == 0 {
        return Err(Error::invalid("performance table", "no tasks"));
    }
    let delta = table.steps_per_task;
    let end = table
        .column_at(n as u64 * delta)
        .map_err(|_| Error::invalid("performance table", "incomplete: no end-of-sequence column"))?;
    let mut total = 0.0;
    for (i, row) in table.success.iter().enumerate() {
        let own = table
            .column_at((i as u64 + 1) * delta)
            .map_err(|_| Error::invalid("performance table", "incomplete: missing end-of-task column"))?;
        total += row[own] - row[end];
    }
    Ok(total / n as f64)
}

/// Mean of `steps_to_threshold / δ`, with `None` (never reached) counted as 1.
pub fn generalization(steps_to_threshold: &[Option<u64>], steps_per_task: u64) -> Result<f64> {
    if steps_to_threshold.is_empty() {
        return Err(Error::invalid("records", "no tasks"));
    }
    if steps_per_task == 0 {
        return Err(Error::invalid("steps_per_task", "must be positive"));
    }
    let delta = steps_per_task as f64;
    let sum: f64 = steps_to_threshold
        .iter()
        .map(|s| s.map_or(1.0, |s| (s as f64 / delta).min(1.0)))
        .sum();
    Ok(sum / steps_to_threshold.len() as f64)
}

/// Jaccard index of two masks; two empty masks count as identical.
pub fn jaccard(a: &Mask, b: &Mask) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return if a.count() == 0 && b.count() == 0 { 1.0 } else { 0.0 };
    }
    a.intersection_count(b) as f64 / union as f64
}

/// Per-layer Jaccard averaged over hidden layers.
pub fn mask_similarity(masks_i: &[Mask], masks_j: &[Mask]) -> Result<f64> {
    if masks_i.len() != masks_j.len() || masks_i.is_empty() {
        return Err(Error::shape("mask_similarity layers", masks_i.len(), masks_j.len()));
    }
    let mut s = 0.0;
    for (a, b) in masks_i.iter().zip(masks_j) {
        if a.len() != b.len() {
            return Err(Error::shape("mask_similarity width", a.len(), b.len()));
        }
        s += jaccard(a, b);
    }
    Ok(s / masks_i.len() as f64)
}

/// Symmetric matrix of [`mask_similarity`] over a list of per-task mask sets.
pub fn similarity_matrix(tasks: &[Vec<Mask>]) -> Result<Vec<Vec<f64>>> {
    let n = tasks.len();
    let mut out = alloc::vec![alloc::vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = mask_similarity(&tasks[i], &tasks[j])?;
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    Ok(out)
}

/// Per-layer Jaccard matrix for hidden layer `layer`.
pub fn layer_similarity_matrix(tasks: &[Vec<Mask>], layer: usize) -> Vec<Vec<f64>> {
    let n = tasks.len();
    let mut out = alloc::vec![alloc::vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = jaccard(&tasks[i][layer], &tasks[j][layer]);
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    out
}

/// Frozen-weight fraction of each weight layer. `widths` is
/// `[input, hidden…, output]`.
pub fn capacity_usage_per_layer(accumulated: &AccumulatedMask, widths: &[usize]) -> Result<Vec<f64>> {
    let depth = widths.len().saturating_sub(1);
    if depth < 2 || accumulated.layers.len() + 1 != depth {
        return Err(Error::shape("capacity_usage layers", depth.saturating_sub(1), accumulated.layers.len()));
    }
    for (l, m) in accumulated.layers.iter().enumerate() {
        if m.len() != widths[l + 1] {
            return Err(Error::shape("capacity_usage width", widths[l + 1], m.len()));
        }
    }
    let mut out = Vec::with_capacity(depth);
    for l in 0..depth {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let mut used = 0usize;
        for j in 0..fan_out {
            for i in 0..fan_in {
                if !weight_is_free(accumulated, depth, l, j, i) {
                    used += 1;
                }
            }
        }
        out.push(used as f64 / (fan_in * fan_out) as f64);
    }
    Ok(out)
}

/// Frozen fraction over all weights of the network.
pub fn capacity_usage(accumulated: &AccumulatedMask, widths: &[usize]) -> Result<f64> {
    let per_layer = capacity_usage_per_layer(accumulated, widths)?;
    let mut used = 0.0;
    let mut total = 0.0;
    for (l, u) in per_layer.iter().enumerate() {
        let n = (widths[l] * widths[l + 1]) as f64;
        used += u * n;
        total += n;
    }
    Ok(used / total)
}
