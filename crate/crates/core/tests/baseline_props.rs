mod common;

use std::collections::BTreeSet;

use dpa_core::baselines::{
    direc_select, dpa_mmr_select, dpp_greedy, dpp_kernel, dpp_quality, dpp_select, mmr_select, msd_select,
    profile_dissimilarity, run_baseline, top_k_by_likelihood, BaselineConfig, BaselineMethod, PairwiseDissimilarity,
};
use dpa_core::model::{CandidateSet, UserId};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

type Scorer<'a> = &'a dyn Fn(usize, &[usize]) -> f64;

/// Same instance with likelihoods quantized to a few levels, forcing ties.
fn with_tied_likelihoods(inst: &mut common::Instance, seed: u64) {
    let mut rng = common::rng(seed);
    inst.likelihoods = (0..inst.m()).map(|_| rng.random_range(0..4) as f64 / 4.0).collect();
    inst.candidates = CandidateSet::new(
        UserId::from("me"),
        inst.likelihoods
            .iter()
            .enumerate()
            .map(|(q, &l)| (UserId::new(format!("c{q}")), l))
            .collect(),
    )
    .unwrap();
}

fn jaccard_oracle(inst: &common::Instance, a: usize, b: usize) -> f64 {
    let set = |q: usize| -> BTreeSet<(usize, u32)> {
        inst.holds
            .iter()
            .enumerate()
            .flat_map(|(h, cols)| cols[q].iter().map(move |&z| (h, z)))
            .collect()
    };
    let (sa, sb) = (set(a), set(b));
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        1.0 - sa.intersection(&sb).count() as f64 / union as f64
    }
}

fn distinct_in_range(sel: &[usize], k: usize, m: usize) -> bool {
    sel.len() == k && sel.iter().collect::<BTreeSet<_>>().len() == k && sel.iter().all(|&q| q < m)
}

fn min_max(ll: &[f64]) -> Vec<f64> {
    let lo = ll.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ll.iter().map(|&l| if hi > lo { (l - lo) / (hi - lo) } else { 1.0 }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_weight_reduces_to_likelihood(seed in any::<u64>(), m in 2usize..25, tied in any::<bool>()) {
        let mut inst = common::random_instance(seed, m, &[4, 6], 2);
        if tied {
            with_tied_likelihoods(&mut inst, seed ^ 9);
        }
        let k = 1 + seed as usize % (m - 1);
        let want: BTreeSet<usize> = common::top_k_reference(&inst.likelihoods, k).into_iter().collect();
        let (c, p) = (&inst.candidates, &inst.profiles);
        let as_set = |v: Vec<usize>| v.into_iter().collect::<BTreeSet<_>>();
        prop_assert_eq!(&as_set(top_k_by_likelihood(c, k).unwrap()), &want);
        prop_assert_eq!(&as_set(mmr_select(c, p, 0.0, k).unwrap()), &want);
        prop_assert_eq!(&as_set(msd_select(c, p, 0.0, k).unwrap()), &want);
        prop_assert_eq!(&as_set(dpp_select(c, p, 0.0, k).unwrap()), &want);
        prop_assert_eq!(&as_set(dpa_mmr_select(&inst.prefs(), c, p, 0.0, k).unwrap()), &want);
    }

    #[test]
    fn every_method_returns_k_distinct(seed in any::<u64>(), m in 2usize..20, theta in 0.0f64..=1.0) {
        let inst = common::random_instance(seed, m, &[3, 5], 2);
        let k = 1 + seed as usize % (m - 1);
        for method in [BaselineMethod::Mmr, BaselineMethod::Msd, BaselineMethod::Dpp, BaselineMethod::DiRec, BaselineMethod::DpaMmr] {
            let config = BaselineConfig { method, theta, sigma: theta, k };
            let sel = run_baseline(&config, &inst.prefs(), &inst.candidates, &inst.profiles).unwrap();
            prop_assert!(distinct_in_range(&sel, k, m), "{:?} {:?}", method, sel);
        }
        let d = direc_select(&inst.candidates, &inst.profiles, k).unwrap();
        prop_assert!(distinct_in_range(&d, k, m));
    }

    #[test]
    fn dissimilarity_is_jaccard(seed in any::<u64>(), m in 2usize..12) {
        let inst = common::random_instance(seed, m, &[3, 4, 2], 2);
        let dis = PairwiseDissimilarity::new(&inst.candidates, &inst.profiles);
        let ids = inst.candidates.candidates();
        for a in 0..m {
            prop_assert_eq!(dis.get(a, a), 0.0);
            for b in 0..m {
                let want = jaccard_oracle(&inst, a, b);
                prop_assert!((dis.get(a, b) - want).abs() < 1e-15);
                prop_assert!((profile_dissimilarity(&inst.profiles, &ids[a], &ids[b]) - want).abs() < 1e-15);
                prop_assert_eq!(dis.get(a, b), dis.get(b, a));
            }
        }
    }

    #[test]
    fn greedy_picks_are_stepwise_maximal(seed in any::<u64>(), m in 3usize..18, theta in 0.0f64..=1.0) {
        let inst = common::random_instance(seed, m, &[4, 4], 2);
        let k = 1 + seed as usize % (m - 1);
        let l = min_max(&inst.likelihoods);
        let dis = |a: usize, b: usize| jaccard_oracle(&inst, a, b);
        let mmr_score = |c: usize, sel: &[usize]| {
            if sel.is_empty() {
                l[c]
            } else {
                (1.0 - theta) * l[c] + theta * sel.iter().map(|&s| dis(c, s)).sum::<f64>() / sel.len() as f64
            }
        };
        let msd_score = |c: usize, sel: &[usize]| (1.0 - theta) * l[c] + theta * sel.iter().map(|&s| dis(c, s)).sum::<f64>();
        let runs: [(Vec<usize>, Scorer); 2] = [
            (mmr_select(&inst.candidates, &inst.profiles, theta, k).unwrap(), &mmr_score),
            (msd_select(&inst.candidates, &inst.profiles, theta, k).unwrap(), &msd_score),
        ];
        for (sel, score) in runs.iter() {
            for t in 0..k {
                let chosen = score(sel[t], &sel[..t]);
                for c in (0..m).filter(|c| !sel[..=t].contains(c)) {
                    prop_assert!(chosen >= score(c, &sel[..t]) - 1e-12);
                }
            }
        }
    }

    #[test]
    fn msd_pair_is_best_partner(seed in any::<u64>(), m in 3usize..12, theta in 0.01f64..=1.0) {
        let inst = common::random_instance(seed, m, &[4, 5], 2);
        let l = min_max(&inst.likelihoods);
        let sel = msd_select(&inst.candidates, &inst.profiles, theta, 2).unwrap();
        let value = |a: usize, b: usize| (1.0 - theta) * (l[a] + l[b]) + theta * jaccard_oracle(&inst, a, b);
        let got = value(sel[0], sel[1]);
        // Exhaustive over every pair containing the first greedy pick.
        for b in (0..m).filter(|&b| b != sel[0]) {
            prop_assert!(got >= value(sel[0], b) - 1e-12);
        }
        prop_assert_eq!(sel[0], common::top_k_reference(&inst.likelihoods, 1)[0]);
    }

    #[test]
    fn dpp_kernel_is_psd_and_gains_are_determinant_ratios(seed in any::<u64>(), m in 2usize..14, theta in 0.05f64..=1.0) {
        let inst = common::random_instance(seed, m, &[3, 4], 2);
        let dis = PairwiseDissimilarity::new(&inst.candidates, &inst.profiles);
        let q = dpp_quality(&inst.candidates.normalized_likelihoods(), theta);
        let kernel = dpp_kernel(&dis, &q);
        let l = DMatrix::from_row_slice(m, m, &kernel);
        prop_assert_eq!(&l, &l.transpose());
        // L = D S D, so PSD follows from the similarity factor at any scale.
        let s = DMatrix::from_fn(m, m, |i, j| 1.0 - dis.get(i, j));
        let s_min = s.symmetric_eigen().eigenvalues.min();
        prop_assert!(s_min >= -1e-8, "similarity min eigenvalue {}", s_min);
        if theta >= 0.25 {
            let l_min = l.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(l_min >= -1e-8, "kernel min eigenvalue {}", l_min);
        }
        let k = 1 + seed as usize % (m - 1);
        let (picks, gains) = dpp_greedy(&kernel, m, k, inst.candidates.likelihoods()).unwrap();
        let det = |s: &[usize]| {
            if s.is_empty() {
                return 1.0;
            }
            l.select_rows(s).select_columns(s).determinant()
        };
        for t in 0..picks.len() {
            let base = det(&picks[..t]);
            let mut with = picks[..t].to_vec();
            with.push(picks[t]);
            let ratio = det(&with) / base;
            prop_assert!((ratio - gains[t]).abs() <= 1e-6 * ratio.abs().max(1.0), "t={} {} vs {}", t, ratio, gains[t]);
            for c in (0..m).filter(|c| !picks[..=t].contains(c)) {
                let mut alt = picks[..t].to_vec();
                alt.push(c);
                prop_assert!(gains[t] >= det(&alt) / base - 1e-6 * gains[t].abs().max(1.0));
            }
        }
    }
}
