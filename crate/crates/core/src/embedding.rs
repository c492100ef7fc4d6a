//! Task embeddings: deterministic stand-ins for a sentence encoder.
//!
//! Every provider returns an ℓ2-normalized vector so that the lasso weight
//! has the same meaning regardless of where the embedding came from.
//!
//! The hashed provider is reproducible across implementations: text is
//! lowercased and split on every non-alphanumeric character; each token `w`
//! maps to `h = XXH64(seed, utf8(w))`, coordinate `h mod m` and sign `+1` if
//! bit 63 of `h` is clear, else `−1`. Token contributions are summed and the
//! sum is normalized.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, norm2};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub task_id: String,
    pub text: String,
}

impl TaskDescription {
    pub fn new(task_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    File,
    Hashed,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEmbedding {
    pub vector: Vec<f64>,
    pub provider: Provider,
}

impl TaskEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

fn normalized(mut v: Vec<f64>, what: &'static str) -> Result<Vec<f64>> {
    ensure_finite(&v, what)?;
    let n = norm2(&v);
    if n == 0.0 {
        return Err(Error::invalid(what, "zero vector cannot be normalized"));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Looks `task_id` up in a loaded embedding table and normalizes it.
pub fn embed_from_table(table: &BTreeMap<String, Vec<f64>>, task_id: &str, m: usize) -> Result<TaskEmbedding> {
    let v = table
        .get(task_id)
        .ok_or_else(|| Error::MissingEmbedding(task_id.to_string()))?;
    if v.len() != m {
        return Err(Error::shape("embedding dimension", m, v.len()));
    }
    Ok(TaskEmbedding {
        vector: normalized(v.clone(), "embedding")?,
        provider: Provider::File,
    })
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Signed feature hashing of the description's tokens.
pub fn embed_hashed(text: &str, m: usize, seed: u64) -> Result<TaskEmbedding> {
    if m == 0 {
        return Err(Error::invalid("m", "embedding dimension must be positive"));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::invalid("text", "description has no tokens"));
    }
    let mut v = vec![0.0; m];
    for t in &tokens {
        let h = rng::hash64(seed, t.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % m as u64) as usize] += sign;
    }
    Ok(TaskEmbedding {
        vector: normalized(v, "hashed embedding")?,
        provider: Provider::Hashed,
    })
}

/// Orthonormal direction for `primitive`, from Gram–Schmidt over a seeded
/// Gaussian sequence. Primitives wrap modulo `m`.
pub fn primitive_direction(primitive: u32, m: usize, seed: u64) -> Vec<f64> {
    let target = primitive as usize % m;
    let mut r = rng::stream(seed, "primitive-basis", 0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(target + 1);
    while basis.len() <= target {
        let mut v: Vec<f64> = (0..m).map(|_| rng::normal(&mut r)).collect();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for q in &basis {
                let p = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
            }
        }
        let n = norm2(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis.pop().expect("basis is non-empty")
}

/// Primitive direction plus Gaussian noise of expected norm `noise_scale`
/// (per-coordinate std `noise_scale/√m`), normalized.
pub fn embed_synthetic(
    primitive: u32,
    variant_seed: u64,
    m: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<TaskEmbedding> {
    if m == 0 {
        return Err(Error::invalid("m", "embedding dimension must be positive"));
    }
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::invalid("noise_scale", "must be finite and non-negative"));
    }
    let mut v = primitive_direction(primitive, m, seed);
    if noise_scale > 0.0 {
        let mut r = rng::stream(
            rng::derive_seed(seed, "primitive", primitive as u64),
            "variant-noise",
            variant_seed,
        );
        let std = noise_scale / libm::sqrt(m as f64);
        v.iter_mut().for_each(|x| *x += std * rng::normal(&mut r));
    }
    Ok(TaskEmbedding {
        vector: normalized(v, "synthetic embedding")?,
        provider: Provider::Synthetic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cosine;

    #[test]
    fn table_lookup_normalizes() {
        let mut t = BTreeMap::new();
        t.insert("hammer-v1".to_string(), vec![2.0, 0.0, 0.0]);
        t.insert("push-v1".to_string(), vec![0.6, 0.8, 0.0]);
        let e = embed_from_table(&t, "hammer-v1", 3).unwrap();
        assert_eq!(e.vector, vec![1.0, 0.0, 0.0]);
        let p = embed_from_table(&t, "push-v1", 3).unwrap();
        assert!((norm2(&p.vector) - 1.0).abs() < 1e-12);
        assert!(matches!(embed_from_table(&t, "absent", 3), Err(Error::MissingEmbedding(_))));
        assert!(embed_from_table(&t, "hammer-v1", 4).is_err());
    }

    #[test]
    fn hashed_is_deterministic_and_unit() {
        let text = "Bypass a wall and push a puck to a goal.";
        let a = embed_hashed(text, 32, 5).unwrap();
        let b = embed_hashed(text, 32, 5).unwrap();
        assert_eq!(a, b);
        assert!((cosine(&a.vector, &b.vector) - 1.0).abs() < 1e-12);
        assert!((norm2(&a.vector) - 1.0).abs() < 1e-12);
        assert!(embed_hashed(" ,.; ", 32, 5).is_err());
        assert_eq!(tokenize("Push-the PUCK"), vec!["push", "the", "puck"]);
    }

    #[test]
    fn synthetic_orthogonal_primitives() {
        let a = embed_synthetic(0, 1, 16, 0.0, 3).unwrap();
        let b = embed_synthetic(0, 2, 16, 0.0, 3).unwrap();
        let c = embed_synthetic(1, 1, 16, 0.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(cosine(&a.vector, &c.vector).abs() < 1e-6);
        assert!(embed_synthetic(0, 1, 16, -1.0, 3).is_err());
    }
}
