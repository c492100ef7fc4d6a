//! Dense meta-policy network with per-neuron hidden masks.
//!
//! Hidden activations of layer `l` are multiplied by that layer's gate before
//! feeding layer `l + 1`; the raw input and the output head are never masked.
//! Forward and backward passes are written out by hand over batches.

mod mask;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use mask::{gates_of, AccumulatedMask, Mask, MaskSet, PromptSet};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::Matrix;
use crate::rng;

pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPolicy {
    layers: Vec<DenseLayer>,
    negative_slope: f64,
    /// Bumped on every parameter update; forward caches remember it.
    #[serde(skip)]
    generation: u64,
}

impl MetaPolicy {
    /// `widths = [input, hidden_1, …, hidden_{L−1}, output]`, He-normal weights
    /// and zero biases.
    pub fn new(widths: &[usize], negative_slope: f64, seed: u64) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::invalid(
                "architecture",
                "need input, at least one hidden layer, and output",
            ));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("architecture", "layer widths must be positive"));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = libm::sqrt(2.0 / fan_in as f64);
            let mut r = rng::stream(seed, "policy-init", l as u64);
            let weights = Matrix::from_fn(fan_out, fan_in, |_, _| std * rng::normal(&mut r));
            layers.push(DenseLayer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self {
            layers,
            negative_slope,
            generation: 0,
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>, negative_slope: f64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::invalid("architecture", "need at least two layers"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::shape("layer bias", layer.outputs(), layer.bias.len()));
            }
            if l > 0 && layer.inputs() != layers[l - 1].outputs() {
                return Err(Error::shape("layer input", layers[l - 1].outputs(), layer.inputs()));
            }
            ensure_finite(layer.weights.as_slice(), "weights")?;
            ensure_finite(&layer.bias, "bias")?;
        }
        Ok(Self {
            layers,
            negative_slope,
            generation: 0,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn negative_slope(&self) -> f64 {
        self.negative_slope
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(DenseLayer::outputs)
            .collect()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    fn check_gates(&self, gates: &[Vec<f64>]) -> Result<()> {
        let widths = self.hidden_widths();
        if gates.len() != widths.len() {
            return Err(Error::shape("mask layers", widths.len(), gates.len()));
        }
        for (g, &w) in gates.iter().zip(&widths) {
            if g.len() != w {
                return Err(Error::shape("mask width", w, g.len()));
            }
        }
        Ok(())
    }

    #[inline]
    fn activate(&self, z: f64) -> f64 {
        if z > 0.0 {
            z
        } else {
            self.negative_slope * z
        }
    }

    #[inline]
    fn activate_grad(&self, z: f64) -> f64 {
        if z > 0.0 {
            1.0
        } else {
            self.negative_slope
        }
    }

    /// Masked forward pass over a batch (`batch × input`).
    ///
    /// `gates` holds one vector per hidden layer; binary masks pass 1.0/0.0,
    /// but any real gate is accepted. Neurons with a zero gate are skipped
    /// entirely by the next layer, so their outgoing weights cannot influence
    /// the result.
    pub fn forward(&self, gates: &[Vec<f64>], inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_gates(gates)?;
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape("forward input", self.input_dim(), inputs.cols()));
        }
        let batch = inputs.rows();
        let depth = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth - 1);
        let mut raw = Vec::with_capacity(depth - 1);
        let mut active: Vec<usize> = (0..self.input_dim()).collect();
        let mut x = inputs.clone();

        for (l, layer) in self.layers.iter().enumerate() {
            let out = layer.outputs();
            let mut z = Matrix::zeros(batch, out);
            for b in 0..batch {
                let xb = x.row(b);
                let zb = z.row_mut(b);
                for (j, zj) in zb.iter_mut().enumerate() {
                    let w = layer.weights.row(j);
                    let mut s = layer.bias[j];
                    for &i in &active {
                        s += w[i] * xb[i];
                    }
                    *zj = s;
                }
            }
            layer_inputs.push(x);
            if l + 1 == depth {
                let cache = ForwardCache {
                    generation: self.generation,
                    batch,
                    gates: gates.to_vec(),
                    layer_inputs,
                    pre,
                    raw,
                };
                return Ok((z, cache));
            }
            let gate = &gates[l];
            let mut y = Matrix::zeros(batch, out);
            let mut masked = Matrix::zeros(batch, out);
            for b in 0..batch {
                for j in 0..out {
                    let a = self.activate(z[(b, j)]);
                    y[(b, j)] = a;
                    masked[(b, j)] = if gate[j] == 0.0 { 0.0 } else { a * gate[j] };
                }
            }
            active = (0..out).filter(|&j| gate[j] != 0.0).collect();
            pre.push(z);
            raw.push(y);
            x = masked;
        }
        unreachable!("network has an output layer")
    }

    /// Convenience forward that discards the cache.
    pub fn predict(&self, gates: &[Vec<f64>], inputs: &Matrix) -> Result<Matrix> {
        self.forward(gates, inputs).map(|(y, _)| y)
    }

    fn backward(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<(Gradients, Vec<Vec<f64>>)> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache {
                cache: cache.generation,
                policy: self.generation,
            });
        }
        if cache.layer_inputs.len() != self.layers.len() {
            return Err(Error::shape("cache layers", self.layers.len(), cache.layer_inputs.len()));
        }
        if loss_grad.shape() != (cache.batch, self.output_dim()) {
            return Err(Error::shape(
                "loss gradient",
                cache.batch * self.output_dim(),
                loss_grad.rows() * loss_grad.cols(),
            ));
        }
        let batch = cache.batch;
        let depth = self.layers.len();
        let mut grads = Gradients::zeros_like(self);
        let mut gate_grads: Vec<Vec<f64>> = self.hidden_widths().iter().map(|&k| vec![0.0; k]).collect();
        let mut delta = loss_grad.clone();

        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let input = &cache.layer_inputs[l];
            let g = &mut grads.layers[l];
            for b in 0..batch {
                let db = delta.row(b);
                let xb = input.row(b);
                for (j, &dj) in db.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    g.bias[j] += dj;
                    let row = g.weights.row_mut(j);
                    for (gw, &xi) in row.iter_mut().zip(xb) {
                        *gw += dj * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Back through layer l's weights into the masked activations of l−1.
            let h = l - 1;
            let gate = &cache.gates[h];
            let width = layer.inputs();
            let mut next = Matrix::zeros(batch, width);
            for b in 0..batch {
                let db = delta.row(b);
                let mut d_masked = vec![0.0; width];
                for (j, &dj) in db.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    let w = layer.weights.row(j);
                    for (dm, &wji) in d_masked.iter_mut().zip(w) {
                        *dm += dj * wji;
                    }
                }
                for i in 0..width {
                    gate_grads[h][i] += d_masked[i] * cache.raw[h][(b, i)];
                    let d_raw = d_masked[i] * gate[i];
                    next[(b, i)] = d_raw * self.activate_grad(cache.pre[h][(b, i)]);
                }
            }
            delta = next;
        }
        Ok((grads, gate_grads))
    }

    /// Exact parameter gradients with the gates held constant.
    pub fn backward_theta(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<Gradients> {
        self.backward(cache, loss_grad).map(|(g, _)| g)
    }

    /// Straight-through prompt gradients.
    ///
    /// The gradient with respect to each gate entry is passed to `α` where
    /// `0 < α < 1` and zeroed elsewhere, i.e. the derivative of
    /// `clip(α, 0, 1)`.
    pub fn backward_alpha(
        &self,
        prompts: &PromptSet,
        cache: &ForwardCache,
        loss_grad: &Matrix,
    ) -> Result<Vec<Vec<f64>>> {
        if prompts.alphas.len() != cache.gates.len() {
            return Err(Error::shape("prompt layers", cache.gates.len(), prompts.alphas.len()));
        }
        let (_, gate_grads) = self.backward(cache, loss_grad)?;
        let mut out = gate_grads;
        for (g, alpha) in out.iter_mut().zip(&prompts.alphas) {
            if g.len() != alpha.len() {
                return Err(Error::shape("prompt width", g.len(), alpha.len()));
            }
            for (gj, &aj) in g.iter_mut().zip(alpha) {
                if !(aj > 0.0 && aj < 1.0) {
                    *gj = 0.0;
                }
            }
        }
        Ok(out)
    }

    /// Plain gradient step `θ ← θ − η ĝ`. Entries whose gradient is exactly
    /// zero are not written. Nothing is modified if any updated value would
    /// be non-finite.
    pub fn apply_update(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape("gradient layers", self.layers.len(), grads.layers.len()));
        }
        for (l, (layer, g)) in self.layers.iter().zip(&grads.layers).enumerate() {
            if g.weights.shape() != layer.weights.shape() || g.bias.len() != layer.bias.len() {
                return Err(Error::shape(
                    "gradient layer",
                    layer.weights.as_slice().len(),
                    g.weights.as_slice().len(),
                ));
            }
            let bad = |p: &[f64], d: &[f64]| p.iter().zip(d).any(|(x, dx)| !(x - lr * dx).is_finite());
            if bad(layer.weights.as_slice(), g.weights.as_slice()) {
                return Err(Error::NonFiniteUpdate {
                    layer: l + 1,
                    part: "weights",
                });
            }
            if bad(&layer.bias, &g.bias) {
                return Err(Error::NonFiniteUpdate {
                    layer: l + 1,
                    part: "bias",
                });
            }
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            step(layer.weights.as_mut_slice(), g.weights.as_slice(), lr);
            step(&mut layer.bias, &g.bias, lr);
        }
        self.generation += 1;
        Ok(())
    }
}

fn step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, &g) in params.iter_mut().zip(grads) {
        if g != 0.0 {
            *p -= lr * g;
        }
    }
}

/// Activations recorded by [`MetaPolicy::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    batch: usize,
    gates: Vec<Vec<f64>>,
    layer_inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    raw: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(policy: &MetaPolicy) -> Self {
        Self {
            layers: policy
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Matrix::zeros(l.outputs(), l.inputs()),
                    bias: vec![0.0; l.outputs()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|g| *g *= s);
            l.bias.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.as_slice().iter().chain(&l.bias).all(|g| *g == 0.0))
    }
}

/// Whether weight `(out, in)` of layer `layer` (0-based) may still be written.
///
/// First layer: row `j` is frozen once hidden neuron `j` of layer 1 is used.
/// Head: column `i` is frozen once neuron `i` of the last hidden layer is
/// used. In between: frozen when both endpoints are used.
#[inline]
pub fn weight_is_free(accumulated: &AccumulatedMask, depth: usize, layer: usize, out: usize, input: usize) -> bool {
    let acc = &accumulated.layers;
    if layer == 0 {
        !acc[0].get(out)
    } else if layer + 1 == depth {
        !acc[layer - 1].get(input)
    } else {
        !(acc[layer - 1].get(input) && acc[layer].get(out))
    }
}

/// Zeroes every gradient entry that would overwrite a weight used by an
/// earlier task.
pub fn gate_gradients(raw: &Gradients, accumulated: &AccumulatedMask) -> Result<Gradients> {
    let depth = raw.layers.len();
    if accumulated.layers.len() + 1 != depth {
        return Err(Error::shape("accumulated mask layers", depth - 1, accumulated.layers.len()));
    }
    let mut gated = raw.clone();
    for (l, g) in gated.layers.iter_mut().enumerate() {
        let (rows, cols) = g.weights.shape();
        if l < depth - 1 && accumulated.layers[l].len() != rows {
            return Err(Error::shape("accumulated mask width", rows, accumulated.layers[l].len()));
        }
        if l > 0 && accumulated.layers[l - 1].len() != cols {
            return Err(Error::shape("accumulated mask width", cols, accumulated.layers[l - 1].len()));
        }
        for j in 0..rows {
            let row = g.weights.row_mut(j);
            for (i, gw) in row.iter_mut().enumerate() {
                if !weight_is_free(accumulated, depth, l, j, i) {
                    *gw = 0.0;
                }
            }
        }
        if l + 1 < depth {
            for (j, gb) in g.bias.iter_mut().enumerate() {
                if accumulated.layers[l].get(j) {
                    *gb = 0.0;
                }
            }
        } else if accumulated.head_bias_frozen {
            g.bias.iter_mut().for_each(|gb| *gb = 0.0);
        }
    }
    Ok(gated)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MetaPolicy {
        // 2 inputs → 2 hidden → 1 output
        let l1 = DenseLayer {
            weights: Matrix::from_rows(&[&[1.0, -1.0], &[0.5, 2.0]]),
            bias: vec![0.1, -0.2],
        };
        let l2 = DenseLayer {
            weights: Matrix::from_rows(&[&[3.0, -2.0]]),
            bias: vec![0.5],
        };
        MetaPolicy::from_layers(vec![l1, l2], 0.01).unwrap()
    }

    #[test]
    fn hand_computed_masked_output() {
        let p = tiny();
        let x = Matrix::from_rows(&[&[1.0, 2.0]]);
        // z1 = (1 - 2 + 0.1, 0.5 + 4 - 0.2) = (-0.9, 4.3); y = (-0.009, 4.3)
        // mask (1, 0): head = 3 * -0.009 + 0.5
        let out = p.predict(&[vec![1.0, 0.0]], &x).unwrap();
        assert!((out[(0, 0)] - (3.0 * -0.009 + 0.5)).abs() < 1e-15);
        let full = p.predict(&[vec![1.0, 1.0]], &x).unwrap();
        assert!((full[(0, 0)] - (3.0 * -0.009 - 2.0 * 4.3 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_mask_gives_head_bias() {
        let p = MetaPolicy::new(&[3, 5, 4, 2], 0.01, 9).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| (i as f64) - (j as f64) * 0.7);
        let out = p.predict(&[vec![0.0; 5], vec![0.0; 4]], &x).unwrap();
        for b in 0..4 {
            assert_eq!(out.row(b), &p.layers()[2].bias[..]);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = tiny();
        let x = Matrix::from_rows(&[&[1.0, 2.0]]);
        assert!(p.forward(&[vec![1.0]], &x).is_err());
        assert!(p.forward(&[], &x).is_err());
        assert!(p.forward(&[vec![1.0, 1.0]], &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn stale_cache_rejected() {
        let mut p = tiny();
        let x = Matrix::from_rows(&[&[1.0, 2.0]]);
        let (_, cache) = p.forward(&[vec![1.0, 1.0]], &x).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.layers[1].bias[0] = 1.0;
        p.apply_update(&g, 0.1).unwrap();
        assert!(matches!(
            p.backward_theta(&cache, &Matrix::zeros(1, 1)),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradient() {
        let p = MetaPolicy::new(&[3, 4, 4, 2], 0.01, 1).unwrap();
        let x = Matrix::from_fn(2, 3, |i, j| (i + j) as f64 * 0.3);
        let (_, cache) = p.forward(&[vec![1.0; 4], vec![1.0; 4]], &x).unwrap();
        let g = p.backward_theta(&cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn masked_neuron_outgoing_gradients_vanish() {
        let p = MetaPolicy::new(&[3, 4, 4, 2], 0.01, 2).unwrap();
        let x = Matrix::from_fn(3, 3, |i, j| (i as f64) * 0.5 - (j as f64) * 0.2 + 0.1);
        let gates = vec![vec![1.0, 0.0, 1.0, 1.0], vec![1.0, 1.0, 1.0, 1.0]];
        let (_, cache) = p.forward(&gates, &x).unwrap();
        let g = p.backward_theta(&cache, &Matrix::from_fn(3, 2, |i, j| 1.0 + (i * j) as f64)).unwrap();
        for j in 0..4 {
            assert_eq!(g.layers[1].weights[(j, 1)], 0.0);
        }
        // and the masked neuron's own incoming weights
        assert!(g.layers[0].weights.row(1).iter().all(|v| *v == 0.0));
        assert_eq!(g.layers[0].bias[1], 0.0);
    }

    #[test]
    fn gating_rules() {
        let p = MetaPolicy::new(&[2, 2, 2, 2], 0.01, 3).unwrap();
        let mut raw = Gradients::zeros_like(&p);
        for l in &mut raw.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
            l.bias.iter_mut().for_each(|v| *v = 1.0);
        }
        let none = AccumulatedMask::empty(&[2, 2]);
        assert_eq!(gate_gradients(&raw, &none).unwrap(), raw);

        let all = AccumulatedMask {
            layers: vec![Mask::ones(2), Mask::ones(2)],
            head_bias_frozen: true,
        };
        assert!(gate_gradients(&raw, &all).unwrap().is_zero());

        let acc = AccumulatedMask {
            layers: vec![Mask::from(vec![true, false]), Mask::from(vec![false, true])],
            head_bias_frozen: false,
        };
        let g = gate_gradients(&raw, &acc).unwrap();
        assert_eq!(g.layers[1].weights, Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]));
        assert_eq!(g.layers[0].weights, Matrix::from_rows(&[&[0.0, 0.0], &[1.0, 1.0]]));
        assert_eq!(g.layers[2].weights, Matrix::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]));
        assert_eq!(g.layers[0].bias, vec![0.0, 1.0]);
        assert_eq!(g.layers[1].bias, vec![1.0, 0.0]);
        assert_eq!(g.layers[2].bias, vec![1.0, 1.0]);
    }

    #[test]
    fn update_arithmetic() {
        let l1 = DenseLayer {
            weights: Matrix::from_rows(&[&[1.0]]),
            bias: vec![0.0],
        };
        let l2 = DenseLayer {
            weights: Matrix::from_rows(&[&[1.0]]),
            bias: vec![0.0],
        };
        let mut p = MetaPolicy::from_layers(vec![l1, l2], 0.01).unwrap();
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        p.apply_update(&g, 0.1).unwrap();
        assert_eq!(p.layers(), before.layers());
        g.layers[0].weights[(0, 0)] = 2.0;
        p.apply_update(&g, 0.0).unwrap();
        assert_eq!(p.layers(), before.layers());
        p.apply_update(&g, 0.1).unwrap();
        assert!((p.layers()[0].weights[(0, 0)] - 0.8).abs() < 1e-15);

        g.layers[1].bias[0] = f64::NAN;
        let snapshot = p.clone();
        assert!(matches!(
            p.apply_update(&g, 0.1),
            Err(Error::NonFiniteUpdate { layer: 2, part: "bias" })
        ));
        assert_eq!(p.layers(), snapshot.layers());
    }

    #[test]
    fn ste_clips_outside_unit_interval() {
        let p = MetaPolicy::new(&[2, 3, 1], 0.01, 4).unwrap();
        let prompts = PromptSet::new(vec![vec![0.5, 1.7, -0.3]]);
        let gates = vec![prompts.masks()[0].gates()];
        let x = Matrix::from_rows(&[&[0.3, -0.8], &[1.0, 0.4]]);
        let (_, cache) = p.forward(&gates, &x).unwrap();
        let lg = Matrix::from_rows(&[&[1.0], &[-0.5]]);
        let ga = p.backward_alpha(&prompts, &cache, &lg).unwrap();
        let (_, raw) = p.backward(&cache, &lg).unwrap();
        assert_eq!(ga[0][0], raw[0][0]);
        assert_eq!(ga[0][1], 0.0);
        assert_eq!(ga[0][2], 0.0);
    }
}
