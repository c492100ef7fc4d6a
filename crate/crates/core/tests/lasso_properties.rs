mod common;

use proptest::prelude::*;
use sparse_prompt_core::rng;
use sparse_prompt_core::sparse_coding::{solve_lasso_cd, solve_lasso_lars, LassoProblem, SolverConfig};

use common::{unit_columns, unit_vec};

fn oracle_config() -> SolverConfig {
    SolverConfig {
        max_iter: Some(200_000),
        kkt_tol: 1e-8,
        sweep_tol: 1e-13,
    }
}

fn lambda_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1e-3), Just(1e-2), Just(1e-1)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lars_agrees_with_coordinate_descent(seed in any::<u64>(), m in 2usize..=10, k in 1usize..=30, lambda in lambda_strategy()) {
        let mut r = rng::stream(seed, "lasso-prop", 0);
        let d = unit_columns(&mut r, m, k);
        let e = unit_vec(&mut r, m);
        let p = LassoProblem::new(&d, &e, lambda).unwrap();
        let lars = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        let cd = solve_lasso_cd(&p, &oracle_config()).unwrap();
        prop_assert!(lars.converged);
        prop_assert!(p.kkt_violation(&lars.coefficients) <= 1e-6);
        // nearly collinear atoms can stall coordinate descent; it is only an
        // oracle where it actually converged
        prop_assume!(cd.converged);
        for (a, b) in lars.coefficients.iter().zip(&cd.coefficients) {
            prop_assert!((a - b).abs() <= 1e-5, "lars {a} cd {b}");
        }
        prop_assert!((lars.objective_value - cd.objective_value).abs() <= 1e-8);
    }

    #[test]
    fn no_single_coordinate_perturbation_helps(seed in any::<u64>(), m in 2usize..=10, k in 1usize..=30, lambda in lambda_strategy()) {
        let mut r = rng::stream(seed, "lasso-perturb", 0);
        let d = unit_columns(&mut r, m, k);
        let e = unit_vec(&mut r, m);
        let p = LassoProblem::new(&d, &e, lambda).unwrap();
        let sol = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        let f0 = sol.objective_value;
        for j in 0..k {
            for delta in [1e-3, -1e-3] {
                let mut a = sol.coefficients.clone();
                a[j] += delta;
                prop_assert!(p.objective(&a) >= f0 - 1e-9);
            }
        }
    }

    #[test]
    fn solvers_are_bitwise_deterministic(seed in any::<u64>(), m in 2usize..=10, k in 1usize..=30) {
        let mut r = rng::stream(seed, "lasso-det", 0);
        let d = unit_columns(&mut r, m, k);
        let e = unit_vec(&mut r, m);
        let p = LassoProblem::new(&d, &e, 1e-2).unwrap();
        let a = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        let b = solve_lasso_lars(&p, &SolverConfig::default()).unwrap();
        prop_assert_eq!(&a, &b);
        let a = solve_lasso_cd(&p, &SolverConfig::default()).unwrap();
        let b = solve_lasso_cd(&p, &SolverConfig::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn mean_support_shrinks_with_lambda() {
    let grid = [1e-4, 1e-3, 1e-2, 1e-1, 3e-1];
    let mut totals = [0usize; 5];
    for i in 0..100 {
        let mut r = rng::stream(17, "support-grid", i);
        let d = unit_columns(&mut r, 8, 24);
        let e = unit_vec(&mut r, 8);
        for (t, &lambda) in totals.iter_mut().zip(&grid) {
            let p = LassoProblem::new(&d, &e, lambda).unwrap();
            *t += solve_lasso_lars(&p, &SolverConfig::default()).unwrap().support.len();
        }
    }
    for w in totals.windows(2) {
        assert!(w[1] <= w[0], "{totals:?}");
    }
    assert!(totals[4] < totals[0]);
}
