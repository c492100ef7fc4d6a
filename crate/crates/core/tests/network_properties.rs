mod common;

use proptest::prelude::*;
use sparse_prompt_core::network::{gate_gradients, gates_of, AccumulatedMask, DenseLayer, Mask, MetaPolicy, PromptSet};
use sparse_prompt_core::rng::{self, Rng};
use sparse_prompt_core::Matrix;

use common::{gaussian, rel_err};

use rand::Rng as _;

fn random_policy(r: &mut Rng, widths: &[usize]) -> MetaPolicy {
    let layers = widths
        .windows(2)
        .map(|w| DenseLayer {
            weights: gaussian(r, w[1], w[0]),
            bias: (0..w[1]).map(|_| 0.5 * rng::normal(r)).collect(),
        })
        .collect();
    MetaPolicy::from_layers(layers, 0.1).unwrap()
}

fn random_mask(r: &mut Rng, k: usize, p: f64) -> Mask {
    (0..k).map(|_| r.random::<f64>() < p).collect()
}

fn half_sq_loss(policy: &MetaPolicy, gates: &[Vec<f64>], x: &Matrix, t: &Matrix) -> f64 {
    let y = policy.predict(gates, x).unwrap();
    y.as_slice().iter().zip(t.as_slice()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
}

fn loss_grad(policy: &MetaPolicy, gates: &[Vec<f64>], x: &Matrix, t: &Matrix) -> Matrix {
    let y = policy.predict(gates, x).unwrap();
    let d: Vec<f64> = y.as_slice().iter().zip(t.as_slice()).map(|(a, b)| a - b).collect();
    Matrix::from_vec(y.rows(), y.cols(), d).unwrap()
}

fn with_param(policy: &MetaPolicy, l: usize, idx: Option<(usize, usize)>, b: usize, delta: f64) -> MetaPolicy {
    let mut layers = policy.layers().to_vec();
    match idx {
        Some((o, i)) => layers[l].weights[(o, i)] += delta,
        None => layers[l].bias[b] += delta,
    }
    MetaPolicy::from_layers(layers, policy.negative_slope()).unwrap()
}

fn check(analytic: f64, numeric: f64) -> bool {
    if analytic.abs().max(numeric.abs()) < 1e-7 {
        (analytic - numeric).abs() < 1e-9
    } else {
        rel_err(analytic, numeric) <= 1e-4
    }
}

#[test]
fn theta_gradient_matches_central_differences() {
    let h = 1e-6;
    for net in 0..20u64 {
        let mut r = rng::stream(31, "fd-theta", net);
        let hidden: Vec<usize> = (0..1 + net as usize % 3).map(|_| r.random_range(2..6)).collect();
        let mut widths = vec![r.random_range(1..4)];
        widths.extend(&hidden);
        widths.push(r.random_range(1..4));
        let policy = random_policy(&mut r, &widths);
        let masks: Vec<Mask> = hidden.iter().map(|&k| random_mask(&mut r, k, 0.7)).collect();
        let gates = gates_of(&masks);
        let x = gaussian(&mut r, 3, widths[0]);
        let t = gaussian(&mut r, 3, *widths.last().unwrap());

        let (_, cache) = policy.forward(&gates, &x).unwrap();
        let grads = policy.backward_theta(&cache, &loss_grad(&policy, &gates, &x, &t)).unwrap();
        for (l, layer) in policy.layers().iter().enumerate() {
            for o in 0..layer.outputs() {
                for i in 0..layer.inputs() {
                    let plus = half_sq_loss(&with_param(&policy, l, Some((o, i)), 0, h), &gates, &x, &t);
                    let minus = half_sq_loss(&with_param(&policy, l, Some((o, i)), 0, -h), &gates, &x, &t);
                    let numeric = (plus - minus) / (2.0 * h);
                    let analytic = grads.layers[l].weights[(o, i)];
                    assert!(check(analytic, numeric), "net {net} layer {l} w({o},{i}): {analytic} vs {numeric}");
                }
                let plus = half_sq_loss(&with_param(&policy, l, None, o, h), &gates, &x, &t);
                let minus = half_sq_loss(&with_param(&policy, l, None, o, -h), &gates, &x, &t);
                let numeric = (plus - minus) / (2.0 * h);
                let analytic = grads.layers[l].bias[o];
                assert!(check(analytic, numeric), "net {net} layer {l} b{o}: {analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn alpha_gradient_matches_clip_surrogate() {
    let h = 1e-6;
    for net in 0..20u64 {
        let mut r = rng::stream(37, "fd-alpha", net);
        let widths = [2, r.random_range(2..6), r.random_range(2..6), 2];
        let policy = random_policy(&mut r, &widths);
        let alphas: Vec<Vec<f64>> = widths[1..3]
            .iter()
            .map(|&k| (0..k).map(|_| r.random_range(0.05..0.95)).collect())
            .collect();
        let prompts = PromptSet::new(alphas.clone());
        let x = gaussian(&mut r, 4, 2);
        let t = gaussian(&mut r, 4, 2);
        // interior point: clip(α, 0, 1) = α
        let (_, cache) = policy.forward(&alphas, &x).unwrap();
        let g = policy.backward_alpha(&prompts, &cache, &loss_grad(&policy, &alphas, &x, &t)).unwrap();
        let clip = |a: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { a.iter().map(|v| v.iter().map(|x| x.clamp(0.0, 1.0)).collect()).collect() };
        for l in 0..alphas.len() {
            for j in 0..alphas[l].len() {
                let mut up = alphas.clone();
                up[l][j] += h;
                let mut down = alphas.clone();
                down[l][j] -= h;
                let numeric = (half_sq_loss(&policy, &clip(&up), &x, &t) - half_sq_loss(&policy, &clip(&down), &x, &t)) / (2.0 * h);
                assert!(check(g[l][j], numeric), "net {net} α[{l}][{j}]: {} vs {numeric}", g[l][j]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn old_sub_networks_are_bitwise_frozen(seed in any::<u64>(), tasks in 2usize..5, steps in 1usize..12) {
        let mut r = rng::stream(seed, "frozen", 0);
        let widths = [3, 10, 10, 2];
        let mut policy = MetaPolicy::new(&widths, 0.01, seed).unwrap();
        let mut acc = AccumulatedMask::empty(&widths[1..3]);
        let probe = gaussian(&mut r, 5, 3);
        let mut done: Vec<(Vec<Mask>, Matrix)> = Vec::new();
        for _ in 0..tasks {
            let masks: Vec<Mask> = widths[1..3].iter().map(|&k| random_mask(&mut r, k, 0.4)).collect();
            let gates = gates_of(&masks);
            for _ in 0..steps {
                let x = gaussian(&mut r, 4, 3);
                let (_, cache) = policy.forward(&gates, &x).unwrap();
                let lg = gaussian(&mut r, 4, 2);
                let raw = policy.backward_theta(&cache, &lg).unwrap();
                policy.apply_update(&gate_gradients(&raw, &acc).unwrap(), 0.02).unwrap();
            }
            for (old_masks, old_out) in &done {
                let now = policy.predict(&gates_of(old_masks), &probe).unwrap();
                let same = now.as_slice().iter().zip(old_out.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
                prop_assert!(same);
            }
            let before = acc.clone();
            acc.accumulate(&masks).unwrap();
            for (old, new) in before.layers.iter().zip(&acc.layers) {
                for (a, b) in old.iter().zip(new.iter()) {
                    prop_assert!(!a || b, "accumulated bit flipped 1 -> 0");
                }
            }
            done.push((masks.clone(), policy.predict(&gates, &probe).unwrap()));
        }
    }

    #[test]
    fn non_positive_prompts_never_turn_on(seed in any::<u64>()) {
        let mut r = rng::stream(seed, "ste", 0);
        let widths = [3, 8, 8, 2];
        let policy = MetaPolicy::new(&widths, 0.01, seed).unwrap();
        let start: Vec<Vec<f64>> = widths[1..3].iter().map(|&k| (0..k).map(|_| r.random_range(-1.0..2.0)).collect()).collect();
        let mut prompts = PromptSet::new(start.clone());
        for _ in 0..20 {
            let gates = gates_of(&prompts.masks());
            let x = gaussian(&mut r, 4, 3);
            let (_, cache) = policy.forward(&gates, &x).unwrap();
            let lg = gaussian(&mut r, 4, 2);
            let g = policy.backward_alpha(&prompts, &cache, &lg).unwrap();
            for (gl, al) in g.iter().zip(&prompts.alphas) {
                for (gj, aj) in gl.iter().zip(al) {
                    if *aj <= 0.0 || *aj >= 1.0 {
                        prop_assert_eq!(*gj, 0.0);
                    }
                }
            }
            prompts.apply_gradient(&g, 5.0).unwrap();
        }
        for (s, a) in start.iter().flatten().zip(prompts.alphas.iter().flatten()) {
            if *s <= 0.0 {
                prop_assert_eq!(s.to_bits(), a.to_bits());
            }
        }
    }
}
