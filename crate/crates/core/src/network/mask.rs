use alloc::vec;
use alloc::vec::Vec;
use core::iter::FromIterator;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary neuron selector for one hidden layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn zeros(k: usize) -> Self {
        Mask(vec![false; k])
    }

    pub fn ones(k: usize) -> Self {
        Mask(vec![true; k])
    }

    pub fn from_indices(k: usize, active: &[usize]) -> Self {
        let mut m = Self::zeros(k);
        for &j in active {
            m.0[j] = true;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn to_vec(&self) -> Vec<bool> {
        self.0.clone()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// 1.0 / 0.0 gate values for the forward pass.
    pub fn gates(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn or(&self, other: &Mask) -> Mask {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| *a || *b).collect()
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_count(&self, other: &Mask) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| **a || **b).count()
    }
}

impl FromIterator<bool> for Mask {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Mask(iter.into_iter().collect())
    }
}

impl From<Vec<bool>> for Mask {
    fn from(v: Vec<bool>) -> Self {
        Mask(v)
    }
}

/// One mask per hidden layer.
pub type MaskSet = Vec<Mask>;

pub fn gates_of(masks: &[Mask]) -> Vec<Vec<f64>> {
    masks.iter().map(Mask::gates).collect()
}

/// Real-valued prompts, one vector per hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub alphas: Vec<Vec<f64>>,
    pub trainable: bool,
}

impl PromptSet {
    pub fn new(alphas: Vec<Vec<f64>>) -> Self {
        Self {
            alphas,
            trainable: true,
        }
    }

    pub fn masks(&self) -> MaskSet {
        self.alphas
            .iter()
            .map(|a| crate::sparse_coding::binarize(a))
            .collect()
    }

    /// `α ← α − η ∇α`. Rejects the step if any entry would become non-finite.
    pub fn apply_gradient(&mut self, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if !self.trainable {
            return Ok(());
        }
        if grads.len() != self.alphas.len() {
            return Err(Error::shape("prompt gradient layers", self.alphas.len(), grads.len()));
        }
        for (l, (a, g)) in self.alphas.iter().zip(grads).enumerate() {
            if a.len() != g.len() {
                return Err(Error::shape("prompt gradient", a.len(), g.len()));
            }
            if a.iter().zip(g).any(|(x, d)| !(x - lr * d).is_finite()) {
                return Err(Error::NonFiniteUpdate {
                    layer: l + 1,
                    part: "prompt",
                });
            }
        }
        for (a, g) in self.alphas.iter_mut().zip(grads) {
            for (x, d) in a.iter_mut().zip(g) {
                if *d != 0.0 {
                    *x -= lr * d;
                }
            }
        }
        Ok(())
    }
}

/// Elementwise OR of the final masks of all completed tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccumulatedMask {
    pub layers: MaskSet,
    /// The shared head bias is trainable during the first task only.
    pub head_bias_frozen: bool,
}

impl AccumulatedMask {
    pub fn empty(hidden_widths: &[usize]) -> Self {
        Self {
            layers: hidden_widths.iter().map(|&k| Mask::zeros(k)).collect(),
            head_bias_frozen: false,
        }
    }

    pub fn accumulate(&mut self, final_masks: &[Mask]) -> Result<()> {
        if final_masks.len() != self.layers.len() {
            return Err(Error::shape(
                "accumulate_mask layers",
                self.layers.len(),
                final_masks.len(),
            ));
        }
        for (acc, m) in self.layers.iter().zip(final_masks) {
            if acc.len() != m.len() {
                return Err(Error::shape("accumulate_mask width", acc.len(), m.len()));
            }
        }
        for (acc, m) in self.layers.iter_mut().zip(final_masks) {
            *acc = acc.or(m);
        }
        self.head_bias_frozen = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(bits: &[u8]) -> Mask {
        bits.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn or_semantics() {
        let mut acc = AccumulatedMask::empty(&[3]);
        acc.accumulate(&[m(&[0, 0, 1])]).unwrap();
        assert!(acc.head_bias_frozen);
        acc.accumulate(&[m(&[1, 0, 0])]).unwrap();
        assert_eq!(acc.layers[0], m(&[1, 0, 1]));

        let x = m(&[1, 0, 1, 1]);
        assert_eq!(x.or(&x), x);
        assert_eq!(x.or(&Mask::zeros(4)), x);
    }

    #[test]
    fn accumulate_rejects_shape_mismatch() {
        let mut acc = AccumulatedMask::empty(&[3, 3]);
        assert!(acc.accumulate(&[m(&[1, 0, 0])]).is_err());
        assert!(acc.accumulate(&[m(&[1, 0]), m(&[1, 0, 0])]).is_err());
        assert!(!acc.head_bias_frozen);
    }

    #[test]
    fn prompt_masks_follow_sign() {
        let p = PromptSet::new(vec![vec![0.3, -0.1, 0.0], vec![2.0]]);
        assert_eq!(p.masks(), vec![m(&[1, 0, 0]), m(&[1])]);
    }
}
