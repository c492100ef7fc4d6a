use proptest::collection::vec;
use proptest::prelude::*;
use sparse_prompt_core::embedding::{embed_hashed, embed_synthetic};
use sparse_prompt_core::linalg::norm2;
use sparse_prompt_core::metrics::{capacity_usage, jaccard, mask_similarity};
use sparse_prompt_core::network::{AccumulatedMask, Mask};

fn mask_set(layers: usize, width: usize) -> impl Strategy<Value = Vec<Mask>> {
    vec(vec(any::<bool>(), width).prop_map(Mask::from), layers)
}

proptest! {
    #[test]
    fn similarity_is_symmetric_and_bounded(a in mask_set(3, 12), b in mask_set(3, 12)) {
        let ab = mask_similarity(&a, &b).unwrap();
        let ba = mask_similarity(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(mask_similarity(&a, &a).unwrap(), 1.0);
        let nonempty = a.iter().zip(&b).all(|(x, y)| x.union_count(y) > 0);
        if nonempty {
            prop_assert_eq!(ab == 1.0, a == b);
        }
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(jaccard(x, y).to_bits(), jaccard(y, x).to_bits());
        }
    }

    #[test]
    fn capacity_never_decreases(tasks in vec(mask_set(2, 9), 1..8)) {
        let widths = [4, 9, 9, 3];
        let mut acc = AccumulatedMask::empty(&widths[1..3]);
        let mut prev = capacity_usage(&acc, &widths).unwrap();
        prop_assert_eq!(prev, 0.0);
        for m in &tasks {
            acc.accumulate(m).unwrap();
            let now = capacity_usage(&acc, &widths).unwrap();
            prop_assert!(now >= prev && now <= 1.0);
            prev = now;
        }
    }

    #[test]
    fn hashed_embeddings_are_unit_and_deterministic(words in vec("[a-z]{1,8}", 1..12), m in 1usize..64, seed in any::<u64>()) {
        let text = words.join(" ");
        let a = embed_hashed(&text, m, seed);
        let b = embed_hashed(&text, m, seed);
        prop_assert_eq!(&a, &b);
        // signed hashing can cancel exactly (e.g. two tokens in one bucket)
        prop_assume!(a.is_ok());
        let a = a.unwrap();
        prop_assert!((norm2(&a.vector) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn synthetic_embeddings_are_unit(p in 0u32..8, v in any::<u64>(), m in 2usize..64, noise in 0.0f64..2.0, seed in any::<u64>()) {
        let a = embed_synthetic(p, v, m, noise, seed).unwrap();
        prop_assert!((norm2(&a.vector) - 1.0).abs() <= 1e-12);
        prop_assert_eq!(a, embed_synthetic(p, v, m, noise, seed).unwrap());
    }
}
