#![allow(dead_code)]

use sparse_prompt_core::rng::{self, Rng};
use sparse_prompt_core::Matrix;

pub fn gaussian(r: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng::normal(r))
}

pub fn gaussian_vec(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng::normal(r)).collect()
}

/// Gaussian columns scaled to unit norm.
pub fn unit_columns(r: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let mut d = gaussian(r, rows, cols);
    for j in 0..cols {
        let n = d.column_norm(j);
        let col: Vec<f64> = d.column(j).iter().map(|v| v / n).collect();
        d.set_column(j, &col);
    }
    d
}

pub fn unit_vec(r: &mut Rng, n: usize) -> Vec<f64> {
    let v = gaussian_vec(r, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
