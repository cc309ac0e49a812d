//! Outer iteration for the sum-of-ratios relaxation and top-k rounding.
//!
//! At iteration `l` the inner problem is solved at `(gamma^l, beta^l)`, the
//! error vector
//!
//! ```text
//! delta_h     = beta_h ||C_h y|| - d̄_h^T C_h y
//! delta_{H+h} = gamma_h ||C_h y|| - 1
//! ```
//!
//! is evaluated at the new iterate, and while `||delta|| >= epsilon` the
//! parameters are reset to the values that zero `delta` at the current
//! iterate: `beta_h = d̄_h^T C_h y / ||C_h y||`, `gamma_h = 1 / ||C_h y||`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    build_all_matrices, CandidateSet, DiversityPreference, ProfileStore, UserId,
};
use crate::problem::MatchingProblem;
use crate::subproblem::{
    solve_subproblem, SubproblemInstance, SubproblemOptions, SubproblemStatus, NORM_KINK,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum InitMode {
    /// `gamma`, `beta` drawn uniformly from `(0, 1]`.
    RandomUniform,
    /// Fixed values, broadcast if a single entry is given.
    Fixed { gamma: Vec<f64>, beta: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub subproblem: SubproblemOptions,
    pub init_seed: u64,
    pub init_mode: InitMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 1e-3,
            max_outer_iterations: 100,
            subproblem: SubproblemOptions::default(),
            init_seed: 0,
            init_mode: InitMode::RandomUniform,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::InvalidParameter(
                "max_outer_iterations must be at least 1".into(),
            ));
        }
        if !(self.subproblem.tol > 0.0) {
            return Err(Error::InvalidParameter("subproblem tol must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }
}

/// One pass of the outer loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub y: Vec<f64>,
    pub delta: Vec<f64>,
    pub delta_norm: f64,
    /// `||delta(y^{l-1}, gamma^l, beta^l)||_inf` over the updated (non
    /// degenerate) dimensions; zero by construction of the update. `None`
    /// on the first iteration.
    pub update_residual: Option<f64>,
    /// Dimensions whose `||C_h y^{l-1}||` vanished, so the update carried
    /// the previous parameters over.
    pub degenerate: Vec<usize>,
    pub subproblem_status: SubproblemStatus,
    pub subproblem_steps: usize,
    pub subproblem_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub iterations: Vec<IterationRecord>,
    pub iteration_count: usize,
    pub converged: bool,
    /// Index into `iterations` of the returned iterate.
    pub best_iteration: usize,
    pub excluded_dimensions: Vec<usize>,
    /// Included dimensions with an empty candidate matrix.
    pub inert_dimensions: Vec<usize>,
    /// Dimensions that carry `gamma`/`beta`, in parameter order.
    pub active_dimensions: Vec<usize>,
    pub h_effective: usize,
    /// Set if any update produced `beta_h < 0`.
    pub negative_beta: bool,
}

impl SolveTrace {
    pub fn final_delta_norm(&self) -> f64 {
        self.iterations[self.best_iteration].delta_norm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedSolution {
    pub y: Vec<f64>,
    pub trace: SolveTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recommendation {
    pub user: UserId,
    pub selected: Vec<UserId>,
    /// Positions in the candidate set, in rounding order.
    pub selected_indices: Vec<usize>,
    pub relaxed_solution: Vec<f64>,
    /// Problem objective at the binary decision, in `[0, H_eff]`.
    pub objective_value: f64,
    pub trace: SolveTrace,
}

/// Error vector over the active dimensions: the `beta` conditions first,
/// then the `gamma` conditions.
pub fn compute_errors(
    problem: &MatchingProblem,
    y: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> Result<Vec<f64>> {
    let active: Vec<_> = problem.active_blocks().collect();
    if gamma.len() != active.len() || beta.len() != active.len() {
        return Err(Error::LengthMismatch {
            expected: active.len(),
            actual: gamma.len().min(beta.len()),
        });
    }
    let mut scratch = Vec::new();
    let mut delta = vec![0.0; 2 * active.len()];
    let h = active.len();
    for (i, b) in active.iter().enumerate() {
        let (dot, norm) = b.dot_norm(y, &mut scratch);
        delta[i] = beta[i] * norm - dot;
        delta[h + i] = gamma[i] * norm - 1.0;
    }
    Ok(delta)
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterUpdate {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Active dimensions (by id) whose norm vanished at `y`.
    pub degenerate: Vec<usize>,
}

/// Parameters that satisfy both stationarity conditions at `y`. Where
/// `||C_h y|| < 1e-12` the previous values are kept.
pub fn update_parameters(
    problem: &MatchingProblem,
    y: &[f64],
    prev_gamma: &[f64],
    prev_beta: &[f64],
) -> ParameterUpdate {
    let mut scratch = Vec::new();
    let mut gamma = prev_gamma.to_vec();
    let mut beta = prev_beta.to_vec();
    let mut degenerate = Vec::new();
    for (i, b) in problem.active_blocks().enumerate() {
        let (dot, norm) = b.dot_norm(y, &mut scratch);
        if norm < NORM_KINK {
            degenerate.push(b.dimension);
            continue;
        }
        beta[i] = dot / norm;
        gamma[i] = 1.0 / norm;
    }
    ParameterUpdate {
        gamma,
        beta,
        degenerate,
    }
}

fn initial_parameters(config: &SolverConfig, active: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    match &config.init_mode {
        InitMode::RandomUniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
            // 1 - U[0, 1) lies in (0, 1].
            let mut draw = || 1.0 - rng.random::<f64>();
            let gamma = (0..active).map(|_| draw()).collect();
            let beta = (0..active).map(|_| draw()).collect();
            Ok((gamma, beta))
        }
        InitMode::Fixed { gamma, beta } => {
            let broadcast = |v: &[f64], name: &str| -> Result<Vec<f64>> {
                match v.len() {
                    1 => Ok(vec![v[0]; active]),
                    n if n == active => Ok(v.to_vec()),
                    n => Err(Error::InvalidParameter(format!(
                        "fixed {name} has {n} entries, expected 1 or {active}"
                    ))),
                }
            };
            Ok((broadcast(gamma, "gamma")?, broadcast(beta, "beta")?))
        }
    }
}

/// Runs the outer iteration and returns the relaxed stationary point (or,
/// on hitting the iteration cap, the iterate with the smallest error norm).
pub fn solve_relaxed(
    problem: &MatchingProblem,
    k: usize,
    config: &SolverConfig,
) -> Result<RelaxedSolution> {
    config.validate()?;
    let m = problem.candidate_count();
    if k == 0 || k >= m {
        return Err(Error::InfeasibleK { k, m });
    }
    let active = problem.active_blocks().count();
    let mut trace = SolveTrace {
        iterations: Vec::new(),
        iteration_count: 0,
        converged: false,
        best_iteration: 0,
        excluded_dimensions: problem.excluded_dimensions().to_vec(),
        inert_dimensions: problem.inert_dimensions(),
        active_dimensions: problem.active_dimensions(),
        h_effective: problem.h_effective(),
        negative_beta: false,
    };

    if active == 0 {
        // Every included dimension is inert: the objective is identically
        // zero and any feasible point is stationary.
        let y = vec![k as f64 / m as f64; m];
        trace.iterations.push(IterationRecord {
            iteration: 1,
            gamma: Vec::new(),
            beta: Vec::new(),
            y: y.clone(),
            delta: Vec::new(),
            delta_norm: 0.0,
            update_residual: None,
            degenerate: Vec::new(),
            subproblem_status: SubproblemStatus::Converged,
            subproblem_steps: 0,
            subproblem_residual: 0.0,
        });
        trace.iteration_count = 1;
        trace.converged = true;
        return Ok(RelaxedSolution { y, trace });
    }

    let (mut gamma, mut beta) = initial_parameters(config, active)?;
    let mut y_prev: Option<Vec<f64>> = None;
    let mut degenerate = Vec::new();
    let mut update_residual = None;

    for iteration in 1..=config.max_outer_iterations {
        let inst = SubproblemInstance::new(problem, &gamma, &beta, k)?;
        let sol = solve_subproblem(&inst, y_prev.as_deref(), &config.subproblem)?;
        let delta = compute_errors(problem, &sol.y, &gamma, &beta)?;
        let delta_norm = euclidean_norm(&delta);
        trace.iterations.push(IterationRecord {
            iteration,
            gamma: gamma.clone(),
            beta: beta.clone(),
            y: sol.y.clone(),
            delta,
            delta_norm,
            update_residual,
            degenerate: std::mem::take(&mut degenerate),
            subproblem_status: sol.status,
            subproblem_steps: sol.steps,
            subproblem_residual: sol.residual,
        });
        if delta_norm < trace.iterations[trace.best_iteration].delta_norm {
            trace.best_iteration = trace.iterations.len() - 1;
        }
        if delta_norm < config.epsilon {
            trace.best_iteration = trace.iterations.len() - 1;
            trace.converged = true;
            break;
        }
        let update = update_parameters(problem, &sol.y, &gamma, &beta);
        if update.beta.iter().any(|&b| b < 0.0) {
            trace.negative_beta = true;
        }
        let check = compute_errors(problem, &sol.y, &update.gamma, &update.beta)?;
        let updated: Vec<bool> = problem
            .active_blocks()
            .map(|b| !update.degenerate.contains(&b.dimension))
            .collect();
        update_residual = Some(
            check
                .iter()
                .enumerate()
                .filter(|(i, _)| updated[i % active])
                .map(|(_, x)| x.abs())
                .fold(0.0, f64::max),
        );
        gamma = update.gamma;
        // Kept within the subproblem's domain; only reachable with negative
        // data, and flagged above.
        beta = update.beta.into_iter().map(|b| b.max(0.0)).collect();
        degenerate = update.degenerate;
        y_prev = Some(sol.y);
    }
    trace.iteration_count = trace.iterations.len();
    let y = trace.iterations[trace.best_iteration].y.clone();
    Ok(RelaxedSolution { y, trace })
}

/// Resolution at which relaxed entries are considered tied.
const TIE_RESOLUTION: f64 = 1e-9;

/// Indices of the `k` largest entries of `y`; ties (at 1e-9 resolution)
/// go to the higher likelihood, then the earlier position.
pub fn round_top_k(y: &[f64], likelihoods: &[f64], k: usize) -> Result<Vec<usize>> {
    if y.len() != likelihoods.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: likelihoods.len(),
        });
    }
    if k > y.len() {
        return Err(Error::InfeasibleK { k, m: y.len() });
    }
    let key = |v: f64| (v / TIE_RESOLUTION).round() as i64;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| {
        key(y[b])
            .cmp(&key(y[a]))
            .then(likelihoods[b].total_cmp(&likelihoods[a]))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// Solves a prepared problem and rounds the result.
pub fn solve_problem(
    problem: &MatchingProblem,
    candidates: &CandidateSet,
    k: usize,
    config: &SolverConfig,
) -> Result<Recommendation> {
    if problem.candidate_count() != candidates.len() {
        return Err(Error::LengthMismatch {
            expected: candidates.len(),
            actual: problem.candidate_count(),
        });
    }
    let relaxed = solve_relaxed(problem, k, config)?;
    let selected_indices = round_top_k(&relaxed.y, candidates.likelihoods(), k)?;
    let objective_value = problem.objective_of_selection(&selected_indices)?;
    Ok(Recommendation {
        user: candidates.user.clone(),
        selected: selected_indices
            .iter()
            .map(|&i| candidates.candidates()[i].clone())
            .collect(),
        selected_indices,
        relaxed_solution: relaxed.y,
        objective_value,
        trace: relaxed.trace,
    })
}

/// Recommends `k` of the user's candidates so that their profile-value
/// histograms best match `prefs` (one preference per profile dimension).
pub fn solve_dpa(
    prefs: &[DiversityPreference],
    candidates: &CandidateSet,
    profiles: &ProfileStore,
    k: usize,
    config: &SolverConfig,
) -> Result<Recommendation> {
    let m = candidates.len();
    if k == 0 || k >= m {
        return Err(Error::InfeasibleK { k, m });
    }
    let matrices = build_all_matrices(candidates, profiles)?;
    let problem = MatchingProblem::new(prefs, &matrices)?;
    solve_problem(&problem, candidates, k, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CandidateProfileMatrix;

    fn pref(dimension: usize, counts: Vec<u64>) -> DiversityPreference {
        DiversityPreference {
            user: UserId::from("u"),
            dimension,
            counts,
        }
    }

    fn problem(cols: &[&[u32]], rows: usize, counts: Vec<u64>) -> MatchingProblem {
        let c = CandidateProfileMatrix::from_columns(0, rows, cols).unwrap();
        MatchingProblem::new(&[pref(0, counts)], &[c]).unwrap()
    }

    #[test]
    fn update_on_aligned_identity() {
        let p = problem(&[&[0], &[1], &[2]], 3, vec![1, 0, 0]);
        let u = update_parameters(&p, &[1.0, 0.0, 0.0], &[0.3], &[0.3]);
        assert_eq!(u.gamma, vec![1.0]);
        assert_eq!(u.beta, vec![1.0]);
        assert!(u.degenerate.is_empty());
    }

    #[test]
    fn update_on_repeated_column() {
        // Columns e1, e1, e2 and y = [1, 1, 0]: C y = [2, 0].
        let p = problem(&[&[0], &[0], &[1]], 2, vec![3, 4]);
        let u = update_parameters(&p, &[1.0, 1.0, 0.0], &[1.0], &[1.0]);
        assert!((u.gamma[0] - 0.5).abs() < 1e-15);
        assert!((u.beta[0] - 0.6).abs() < 1e-15);
        let delta = compute_errors(&p, &[1.0, 1.0, 0.0], &u.gamma, &u.beta).unwrap();
        assert!(delta.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn update_carries_over_on_degenerate_norm() {
        let p = problem(&[&[0], &[], &[]], 1, vec![2]);
        let u = update_parameters(&p, &[0.0, 0.5, 0.5], &[0.7], &[0.2]);
        assert_eq!(u.gamma, vec![0.7]);
        assert_eq!(u.beta, vec![0.2]);
        assert_eq!(u.degenerate, vec![0]);
    }

    #[test]
    fn errors_at_zero_parameters() {
        let p = problem(&[&[0], &[1], &[1]], 2, vec![3, 4]);
        let y = [0.5, 0.25, 0.25];
        let delta = compute_errors(&p, &y, &[0.0], &[0.0]).unwrap();
        let dot = 0.5 * 0.6 + 0.5 * 0.8;
        assert!((delta[0] + dot).abs() < 1e-15);
        assert_eq!(delta[1], -1.0);
    }

    #[test]
    fn rounding_breaks_ties_by_likelihood_then_position() {
        let y = [0.5, 0.5, 1.0, 0.5 + 1e-12, 0.0];
        let ll = [0.1, 0.9, 0.2, 0.1, 1.0];
        assert_eq!(round_top_k(&y, &ll, 2).unwrap(), vec![2, 1]);
        assert_eq!(round_top_k(&y, &ll, 3).unwrap(), vec![2, 1, 0]);
        assert!(round_top_k(&y, &ll[..2], 1).is_err());
    }

    #[test]
    fn perfectly_matchable_preference() {
        // d = (1, 1, 0, 0): only candidates 0 and 1 together reproduce it.
        let p = problem(&[&[0], &[1], &[2], &[3], &[2]], 4, vec![1, 1, 0, 0]);
        let set = CandidateSet::new(
            UserId::from("u"),
            (0..5).map(|i| (UserId::new(format!("c{i}")), 0.5)).collect(),
        )
        .unwrap();
        let rec = solve_problem(&p, &set, 2, &SolverConfig::default()).unwrap();
        assert!(rec.trace.converged);
        let mut picked = rec.selected_indices.clone();
        picked.sort();
        assert_eq!(picked, vec![0, 1]);
        assert!((rec.objective_value - 1.0).abs() < 1e-12, "{rec:?}");
    }

    #[test]
    fn fixed_init_is_broadcast() {
        let p = problem(&[&[0], &[1], &[1], &[0]], 2, vec![1, 1]);
        let cfg = SolverConfig {
            init_mode: InitMode::Fixed {
                gamma: vec![1.0],
                beta: vec![0.5],
            },
            ..SolverConfig::default()
        };
        let sol = solve_relaxed(&p, 2, &cfg).unwrap();
        assert_eq!(sol.trace.iterations[0].gamma, vec![1.0]);
        assert!(sol.trace.converged);
        let bad = SolverConfig {
            init_mode: InitMode::Fixed {
                gamma: vec![1.0, 2.0],
                beta: vec![0.5],
            },
            ..SolverConfig::default()
        };
        assert!(solve_relaxed(&p, 2, &bad).is_err());
    }

    #[test]
    fn infeasible_k_and_config() {
        let p = problem(&[&[0], &[1]], 2, vec![1, 1]);
        assert!(matches!(
            solve_relaxed(&p, 2, &SolverConfig::default()),
            Err(Error::InfeasibleK { .. })
        ));
        let cfg = SolverConfig {
            epsilon: 0.0,
            ..SolverConfig::default()
        };
        assert!(solve_relaxed(&p, 1, &cfg).is_err());
    }

    #[test]
    fn all_inert_dimensions_converge_trivially() {
        let p = problem(&[&[], &[], &[]], 2, vec![1, 1]);
        let sol = solve_relaxed(&p, 1, &SolverConfig::default()).unwrap();
        assert!(sol.trace.converged);
        assert_eq!(sol.trace.inert_dimensions, vec![0]);
    }
}
