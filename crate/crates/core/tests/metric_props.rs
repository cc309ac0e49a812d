mod common;

use std::collections::BTreeSet;

use dpa_core::metrics::{dcg, dpms, improvement_percent, paired_t_test, precision_recall_f1, EvaluationRecord};
use dpa_core::problem::dpa_objective;
use dpa_core::UserId;
use proptest::prelude::*;
use rand::Rng;

fn record(k: usize, hits: &[usize], extra: usize) -> EvaluationRecord {
    let recommended: Vec<UserId> = (0..k).map(|j| UserId::new(format!("r{j}"))).collect();
    let mut added: BTreeSet<UserId> = hits.iter().map(|&j| UserId::new(format!("r{j}"))).collect();
    added.extend((0..extra).map(|j| UserId::new(format!("x{j}"))));
    EvaluationRecord::new(UserId::from("me"), recommended, added).unwrap()
}

#[test]
fn count_identities_exact_for_small_denominators() {
    // For every denominator up to 21, `(a / b) * b == a` holds in f64.
    for k in 1..=21 {
        for tp in 0..=k {
            let hits: Vec<usize> = (0..tp).collect();
            for extra in 0..=(21 - tp) {
                let prf = precision_recall_f1(&record(k, &hits, extra));
                let p = tp + extra;
                assert_eq!(prf.true_positives, tp);
                assert_eq!(prf.precision * k as f64, tp as f64, "k={k} tp={tp}");
                match prf.recall {
                    Some(r) => assert_eq!(r * p as f64, tp as f64, "p={p} tp={tp}"),
                    None => assert_eq!(p, 0),
                }
            }
        }
    }
}

#[test]
fn count_identities_up_to_quotient_rounding() {
    // Beyond 21 the stored ratio is the correctly rounded quotient, so the
    // exact residual `ratio * n - tp` is at most half an ulp times `n`.
    let within = |ratio: f64, n: usize, tp: usize| {
        let residual = ratio.mul_add(n as f64, -(tp as f64));
        let half_ulp = (f64::from_bits(ratio.to_bits() + 1) - ratio) / 2.0;
        residual.abs() <= half_ulp * n as f64
    };
    for k in 1..=100 {
        for tp in 0..=k {
            let hits: Vec<usize> = (0..tp).collect();
            for extra in [0, 1, 7, 50] {
                let prf = precision_recall_f1(&record(k, &hits, extra));
                assert_eq!(prf.true_positives, tp);
                assert!(within(prf.precision, k, tp), "k={k} tp={tp}");
                let p = tp + extra;
                match prf.recall {
                    Some(r) => assert!(within(r, p, tp), "p={p} tp={tp}"),
                    None => assert_eq!(p, 0),
                }
            }
        }
    }
}

#[test]
fn all_relevant_top_three_dcg() {
    let v = dcg(&record(3, &[0, 1, 2], 0));
    assert!((v - 2.1309).abs() < 1e-4, "{v}");
    assert!((v - (1.0 + 1.0 / 3f64.log2() + 0.5)).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn f1_is_harmonic_mean(k in 1usize..40, seed in any::<u64>(), extra in 0usize..30) {
        let mut rng = common::rng(seed);
        let hits: Vec<usize> = (0..k).filter(|_| rng.random_bool(0.4)).collect();
        let prf = precision_recall_f1(&record(k, &hits, extra));
        match (prf.recall, prf.f1) {
            (Some(r), Some(f)) => {
                let p = prf.precision;
                if p + r == 0.0 {
                    prop_assert_eq!(f, 0.0);
                } else {
                    prop_assert!((f * (p + r) - 2.0 * p * r).abs() <= 1e-12);
                }
            }
            (None, None) => prop_assert!(hits.is_empty() && extra == 0),
            _ => prop_assert!(false, "recall and F1 must be defined together"),
        }
    }

    #[test]
    fn dcg_sums_discounted_hits(k in 1usize..30, seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let hits: Vec<usize> = (0..k).filter(|_| rng.random_bool(0.5)).collect();
        let want: f64 = hits.iter().map(|&j| std::f64::consts::LN_2 / ((j + 2) as f64).ln()).sum();
        let got = dcg(&record(k, &hits, 0));
        prop_assert!((got - want).abs() < 1e-12);
        let ideal: f64 = (0..hits.len()).map(|j| 1.0 / ((j + 2) as f64).log2()).sum();
        prop_assert!(got <= ideal + 1e-12);
    }

    #[test]
    fn dpms_is_objective_over_h_eff(seed in any::<u64>(), m in 2usize..20) {
        let inst = common::random_instance(seed, m, &[3, 6, 4], 2);
        let mut rng = common::rng(seed ^ 17);
        let k = rng.random_range(1..=m);
        let sel: Vec<usize> = rand::seq::index::sample(&mut rng, m, k).into_vec();
        let score = dpms(&inst.prefs(), &inst.matrices(), &sel).unwrap().unwrap();
        let obj = dpa_objective(&inst.prefs(), &inst.matrices(), &inst.indicator(&sel)).unwrap();
        prop_assert!((score - obj / inst.h_eff() as f64).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&score));
    }

    #[test]
    fn paired_test_matches_formula(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = common::rng(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let res = paired_t_test(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        prop_assert!(!res.degenerate);
        prop_assert!((res.t_statistic - mean / (sd / (n as f64).sqrt())).abs() < 1e-9 * (1.0 + res.t_statistic.abs()));
        prop_assert!((0.0..=1.0).contains(&res.p_value));
        let swapped = paired_t_test(&b, &a).unwrap();
        prop_assert!((swapped.t_statistic + res.t_statistic).abs() < 1e-12);
        prop_assert!((swapped.p_value - res.p_value).abs() < 1e-12);
    }

    #[test]
    fn improvement_is_relative_change(ours in 0.0f64..10.0, theirs in 0.01f64..10.0) {
        let v = improvement_percent(ours, theirs).unwrap();
        prop_assert!((theirs * (1.0 + v / 100.0) - ours).abs() < 1e-12);
    }
}

#[test]
fn identical_samples_are_degenerate() {
    let a = [0.3, 0.5, 0.9];
    let res = paired_t_test(&a, &a).unwrap();
    assert!(res.degenerate);
    assert_eq!((res.t_statistic, res.p_value), (0.0, 1.0));
    let shifted: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
    let res = paired_t_test(&shifted, &a).unwrap();
    assert!(res.degenerate && res.p_value == 0.0 && res.t_statistic == f64::INFINITY);
}
