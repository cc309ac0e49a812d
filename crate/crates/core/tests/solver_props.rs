mod common;

use dpa_core::oracle::{binomial, exhaustive_optimal, percent_gap, selection_overlap};
use dpa_core::solver::{compute_errors, round_top_k, solve_problem, update_parameters};
use dpa_core::{Error, SolverConfig};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solve_returns_valid_selection(seed in any::<u64>(), m in 3usize..20) {
        let inst = common::random_instance(seed, m, &[5, 4, 7], 2);
        let problem = inst.problem();
        let mut rng = common::rng(seed ^ 11);
        let k = rng.random_range(1..m);
        let config = SolverConfig::default().with_seed(seed);
        let rec = solve_problem(&problem, &inst.candidates, k, &config).unwrap();
        let mut sel = rec.selected_indices.clone();
        sel.sort_unstable();
        sel.dedup();
        prop_assert_eq!(sel.len(), k);
        prop_assert!(sel.iter().all(|&q| q < m));
        for (q, u) in rec.selected_indices.iter().zip(&rec.selected) {
            prop_assert_eq!(&inst.candidates.candidates()[*q], u);
        }
        let dense = inst.dense_objective(&inst.indicator(&rec.selected_indices));
        prop_assert!((rec.objective_value - dense).abs() < 1e-12);
        let t = &rec.trace;
        prop_assert!(t.iteration_count <= config.max_outer_iterations);
        prop_assert_eq!(t.h_effective, inst.h_eff());
    }

    #[test]
    fn converged_solves_satisfy_stationarity(seed in any::<u64>(), m in 4usize..20) {
        let inst = common::random_instance(seed, m, &[6, 5], 3);
        let problem = inst.problem();
        let k = 1 + (seed as usize % (m - 1));
        let config = SolverConfig::default().with_seed(seed ^ 3);
        let rec = solve_problem(&problem, &inst.candidates, k, &config).unwrap();
        let t = &rec.trace;
        for it in &t.iterations[1..] {
            if let Some(res) = it.update_residual {
                prop_assert!(res <= 1e-10, "update residual {}", res);
            }
        }
        if t.converged {
            let last = &t.iterations[t.best_iteration];
            let delta = compute_errors(&problem, &last.y, &last.gamma, &last.beta).unwrap();
            prop_assert!(delta.iter().all(|d| d.abs() < config.epsilon));
            prop_assert!(t.final_delta_norm() < config.epsilon);
        }
    }

    #[test]
    fn update_zeroes_errors(seed in any::<u64>(), m in 2usize..15) {
        let inst = common::random_instance(seed, m, &[4, 4], 2);
        let problem = inst.problem();
        let mut rng = common::rng(seed ^ 13);
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let h = problem.active_blocks().count();
        let init = vec![0.5; h];
        let up = update_parameters(&problem, &y, &init, &init);
        let delta = compute_errors(&problem, &y, &up.gamma, &up.beta).unwrap();
        for (i, b) in problem.active_blocks().enumerate() {
            if up.degenerate.contains(&b.dimension) {
                continue;
            }
            prop_assert!(delta[i].abs() <= 1e-10 && delta[h + i].abs() <= 1e-10);
        }
    }

    #[test]
    fn rounding_picks_largest(seed in any::<u64>(), m in 1usize..30) {
        let mut rng = common::rng(seed);
        let k = rng.random_range(0..=m);
        let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let ll: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let got = round_top_k(&y, &ll, k).unwrap();
        prop_assert_eq!(got, common::top_k_reference(&y, k));
    }

    #[test]
    fn rounding_breaks_ties_by_likelihood(seed in any::<u64>(), m in 2usize..20) {
        let mut rng = common::rng(seed);
        let k = rng.random_range(1..m);
        let y = vec![0.5; m];
        let ll: Vec<f64> = (0..m).map(|_| (rng.random_range(0..5) as f64) / 4.0).collect();
        let got = round_top_k(&y, &ll, k).unwrap();
        prop_assert_eq!(got, common::top_k_reference(&ll, k));
    }

    #[test]
    fn oracle_agrees_with_brute_force(seed in any::<u64>(), m in 2usize..11) {
        let inst = common::random_instance(seed, m, &[4, 3, 5], 2);
        let problem = inst.problem();
        let k = 1 + (seed as usize % m);
        let best = exhaustive_optimal(&problem, k, 1_000_000).unwrap();
        let all = common::subsets(m, k);
        prop_assert_eq!(best.subsets_evaluated as usize, all.len());
        prop_assert_eq!(binomial(m, k) as usize, all.len());
        let values: Vec<f64> = all.iter().map(|s| inst.dense_objective(&inst.indicator(s))).collect();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((best.optimal_objective - max).abs() < 1e-12);
        let first = all.iter().zip(&values).find(|(_, v)| **v >= max - 1e-12).unwrap().0;
        let runner_up = values.iter().copied().filter(|v| *v < max - 1e-9).fold(f64::NEG_INFINITY, f64::max);
        let ties = values.iter().filter(|v| **v >= max - 1e-9).count();
        if ties == 1 || runner_up == f64::NEG_INFINITY {
            prop_assert_eq!(&best.optimal_selection, first);
        }
        if k < m {
            let rec = solve_problem(&problem, &inst.candidates, k, &SolverConfig::default()).unwrap();
            prop_assert!(rec.objective_value <= best.optimal_objective + 1e-12);
            let gap = percent_gap(best.optimal_objective, rec.objective_value);
            prop_assert!(gap.is_none_or(|g| g >= -1e-9));
            prop_assert!(selection_overlap(&rec.selected_indices, &best.optimal_selection) <= k);
        }
    }
}

#[test]
fn oracle_respects_budget() {
    let inst = common::random_instance(1, 30, &[4], 1);
    let err = exhaustive_optimal(&inst.problem(), 15, 1000).unwrap_err();
    assert!(matches!(err, Error::BudgetExceeded { m: 30, k: 15, .. }));
}

#[test]
fn solver_rejects_infeasible_k() {
    let inst = common::random_instance(2, 5, &[3], 1);
    for k in [0, 5, 6] {
        let err = solve_problem(&inst.problem(), &inst.candidates, k, &SolverConfig::default());
        assert!(matches!(err, Err(Error::InfeasibleK { .. })), "k={k}");
    }
}

#[test]
fn same_seed_same_trace() {
    let inst = common::random_instance(3, 25, &[6, 6, 6], 2);
    let p = inst.problem();
    let c = SolverConfig::default().with_seed(99);
    let a = solve_problem(&p, &inst.candidates, 5, &c).unwrap();
    let b = solve_problem(&p, &inst.candidates, 5, &c).unwrap();
    assert_eq!(a, b);
}
