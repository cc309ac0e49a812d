//! Exhaustive search over all `k`-subsets, for small instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::MatchingProblem;
use crate::solver::Recommendation;

pub const DEFAULT_BUDGET: u64 = 5_000_000;

/// Objectives within this of the incumbent do not replace it, so the
/// lexicographically first subset wins ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Ascending candidate indices.
    pub optimal_selection: Vec<usize>,
    pub optimal_objective: f64,
    pub subsets_evaluated: u64,
}

/// `C(m, k)`, saturating at `u128::MAX`.
pub fn binomial(m: usize, k: usize) -> u128 {
    if k > m {
        return 0;
    }
    let k = k.min(m - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((m - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Running per-block state for binary selections: counts per compact row,
/// `||r||^2` as an integer and the dot product accumulated per depth.
struct BlockState {
    counts: Vec<u32>,
    sq: u64,
}

struct Search<'a> {
    problem: &'a MatchingProblem,
    k: usize,
    states: Vec<BlockState>,
    /// `dots[depth][block]`.
    dots: Vec<Vec<f64>>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_objective: f64,
    evaluated: u64,
}

impl Search<'_> {
    fn add(&mut self, q: usize, depth: usize) {
        for (b, (block, state)) in self.problem.blocks().iter().zip(&mut self.states).enumerate() {
            let mut dot = self.dots[depth][b];
            for &z in block.column(q) {
                let c = &mut state.counts[z as usize];
                state.sq += 2 * u64::from(*c) + 1;
                *c += 1;
                dot += block.unit_pref()[z as usize];
            }
            self.dots[depth + 1][b] = dot;
        }
    }

    fn remove(&mut self, q: usize) {
        for (block, state) in self.problem.blocks().iter().zip(&mut self.states) {
            for &z in block.column(q) {
                let c = &mut state.counts[z as usize];
                *c -= 1;
                state.sq -= 2 * u64::from(*c) + 1;
            }
        }
    }

    fn leaf(&mut self) {
        self.evaluated += 1;
        let depth = self.k;
        let objective: f64 = self
            .states
            .iter()
            .zip(&self.dots[depth])
            .map(|(s, &dot)| {
                if s.sq == 0 {
                    0.0
                } else {
                    dot / (s.sq as f64).sqrt()
                }
            })
            .sum();
        if objective > self.best_objective + TIE_TOLERANCE {
            self.best_objective = objective;
            self.best.clone_from(&self.current);
        }
    }

    fn descend(&mut self, start: usize, depth: usize) {
        if depth == self.k {
            self.leaf();
            return;
        }
        let m = self.problem.candidate_count();
        let remaining = self.k - depth;
        for q in start..=m - remaining {
            self.current.push(q);
            self.add(q, depth);
            self.descend(q + 1, depth + 1);
            self.remove(q);
            self.current.pop();
        }
    }
}

/// Maximizes the problem objective over all binary selections of size `k`,
/// enumerating subsets in lexicographic order.
pub fn exhaustive_optimal(problem: &MatchingProblem, k: usize, budget: u64) -> Result<OracleResult> {
    let m = problem.candidate_count();
    if k == 0 || k > m {
        return Err(Error::InfeasibleK { k, m });
    }
    let count = binomial(m, k);
    if count > u128::from(budget) {
        return Err(Error::BudgetExceeded {
            m,
            k,
            count,
            budget,
        });
    }
    let h = problem.h_effective();
    let mut search = Search {
        problem,
        k,
        states: problem
            .blocks()
            .iter()
            .map(|b| BlockState {
                counts: vec![0; b.rows()],
                sq: 0,
            })
            .collect(),
        dots: vec![vec![0.0; h]; k + 1],
        current: Vec::with_capacity(k),
        best: Vec::new(),
        best_objective: f64::NEG_INFINITY,
        evaluated: 0,
    };
    search.descend(0, 0);
    Ok(OracleResult {
        optimal_selection: search.best,
        optimal_objective: search.best_objective,
        subsets_evaluated: search.evaluated,
    })
}

/// `(optimal - approximate) / optimal * 100`; `None` when the optimum is 0.
pub fn percent_gap(optimal: f64, approximate: f64) -> Option<f64> {
    if optimal == 0.0 {
        None
    } else {
        Some((optimal - approximate) / optimal * 100.0)
    }
}

pub fn objective_difference(approx: &Recommendation, oracle: &OracleResult) -> Option<f64> {
    percent_gap(oracle.optimal_objective, approx.objective_value)
}

pub fn selection_overlap(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|i| b.contains(i)).count()
}

pub fn recommendation_overlap(approx: &Recommendation, oracle: &OracleResult) -> usize {
    selection_overlap(&approx.selected_indices, &oracle.optimal_selection)
}
