//! The convex inner problem solved at fixed `(gamma, beta)`:
//!
//! ```text
//! maximize   sum_h gamma_h (d̄_h^T C_h y - beta_h ||C_h y||)
//! subject to 0 <= y <= 1,  1^T y = k
//! ```
//!
//! Each term is a linear function minus a nonnegative multiple of a norm, so
//! the objective is concave. It is maximized by projected gradient ascent
//! with backtracking onto the capped simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{DimensionBlock, MatchingProblem};

/// Below this `||C_h y||` the norm term's supergradient is taken as zero.
pub const NORM_KINK: f64 = 1e-12;

/// Allowed slack on `1^T y = k` for a feasible point.
pub const SUM_TOLERANCE: f64 = 1e-9;

const PROJECTION_TOL: f64 = 1e-10;

/// Blocks with `||C_h y||` below this get one-sided derivatives when the
/// plain line search fails.
const KINK_FALLBACK: f64 = 1e-6;

/// Fixed-parameter inner problem. `gamma[i]`, `beta[i]` belong to the i-th
/// active block of the problem.
#[derive(Clone, Copy, Debug)]
pub struct SubproblemInstance<'a> {
    problem: &'a MatchingProblem,
    gamma: &'a [f64],
    beta: &'a [f64],
    k: usize,
}

impl<'a> SubproblemInstance<'a> {
    pub fn new(
        problem: &'a MatchingProblem,
        gamma: &'a [f64],
        beta: &'a [f64],
        k: usize,
    ) -> Result<Self> {
        let active = problem.active_blocks().count();
        for v in [gamma, beta] {
            if v.len() != active {
                return Err(Error::LengthMismatch {
                    expected: active,
                    actual: v.len(),
                });
            }
        }
        if gamma.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidParameter("gamma must be positive".into()));
        }
        if beta.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidParameter("beta must be nonnegative".into()));
        }
        let m = problem.candidate_count();
        if k == 0 || k >= m {
            return Err(Error::InfeasibleK { k, m });
        }
        Ok(SubproblemInstance {
            problem,
            gamma,
            beta,
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn problem(&self) -> &MatchingProblem {
        self.problem
    }

    fn terms(&self) -> impl Iterator<Item = (&DimensionBlock, f64, f64)> {
        self.problem
            .active_blocks()
            .zip(self.gamma.iter().zip(self.beta))
            .map(|(b, (&g, &be))| (b, g, be))
    }

    /// Objective without the constant `1^T beta`.
    pub fn objective(&self, y: &[f64]) -> f64 {
        let mut scratch = Vec::new();
        self.objective_with(y, &mut scratch)
    }

    fn objective_with(&self, y: &[f64], scratch: &mut Vec<f64>) -> f64 {
        self.terms()
            .map(|(b, g, be)| {
                let (dot, norm) = b.dot_norm(y, scratch);
                g * (dot - be * norm)
            })
            .sum()
    }

    /// Supergradient of the objective at `y`.
    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut g = vec![0.0; y.len()];
        self.gradient_with(y, &mut scratch, &mut g);
        g
    }

    fn gradient_with(&self, y: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        self.gradient_near_kink(y, NORM_KINK, false, scratch, out);
    }

    /// Gradient with blocks whose `||C_h y||` is below `threshold` treated
    /// as sitting on the kink. With `one_sided`, such a block contributes
    /// `gamma_h (d̄_h^T c_q - beta_h ||c_q||)` to coordinate `q`, the
    /// derivative of its term along `e_q` from `C_h y = 0`; otherwise the
    /// norm term is dropped.
    fn gradient_near_kink(&self, y: &[f64], threshold: f64, one_sided: bool, scratch: &mut Vec<f64>, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut v = Vec::new();
        for (b, g, be) in self.terms() {
            b.apply(y, scratch);
            let norm = scratch.iter().map(|r| r * r).sum::<f64>().sqrt();
            v.clear();
            if norm < threshold && one_sided {
                let u = b.unit_pref();
                for (q, o) in out.iter_mut().enumerate() {
                    let col = b.column(q);
                    if !col.is_empty() {
                        let dot: f64 = col.iter().map(|&z| u[z as usize]).sum();
                        *o += g * (dot - be * (col.len() as f64).sqrt());
                    }
                }
                continue;
            }
            if norm < threshold {
                v.extend_from_slice(b.unit_pref());
            } else {
                v.extend(
                    b.unit_pref()
                        .iter()
                        .zip(scratch.iter())
                        .map(|(d, r)| d - be * r / norm),
                );
            }
            b.add_transpose(&v, g, out);
        }
    }

    /// Whether any block's `||C_h y||` is below `threshold`.
    fn near_kink(&self, y: &[f64], threshold: f64, scratch: &mut Vec<f64>) -> bool {
        self.terms().any(|(b, _, _)| b.dot_norm(y, scratch).1 < threshold)
    }
}

/// Whether `y` lies in the capped simplex `{0 <= y <= 1, 1^T y = k}`.
pub fn is_feasible(y: &[f64], k: usize) -> bool {
    y.iter().all(|&v| (0.0..=1.0).contains(&v))
        && (y.iter().sum::<f64>() - k as f64).abs() <= SUM_TOLERANCE
}

/// Euclidean projection onto `{0 <= y <= 1, 1^T y = k}`.
///
/// The projection has the form `y_j = clamp(v_j - tau, 0, 1)`; `tau` is
/// found by bisection on the monotone map `tau -> sum_j y_j`.
pub fn project_capped_simplex(v: &[f64], k: usize) -> Result<Vec<f64>> {
    let m = v.len();
    if k == 0 || k >= m {
        return Err(Error::InfeasibleK { k, m });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("projection input must be finite".into()));
    }
    let target = k as f64;
    let sum_at = |tau: f64| v.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).sum::<f64>();
    let lo0 = v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi0 = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..200 {
        tau = 0.5 * (lo + hi);
        let s = sum_at(tau);
        if (s - target).abs() <= PROJECTION_TOL {
            break;
        }
        if s > target {
            lo = tau;
        } else {
            hi = tau;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
    }
    let mut y: Vec<f64> = v.iter().map(|&x| (x - tau).clamp(0.0, 1.0)).collect();
    // Spread any leftover mass over the free coordinates.
    for _ in 0..4 {
        let resid = target - y.iter().sum::<f64>();
        if resid.abs() <= PROJECTION_TOL * 1e-2 {
            break;
        }
        let free: Vec<usize> = (0..m).filter(|&j| y[j] > 0.0 && y[j] < 1.0).collect();
        if free.is_empty() {
            break;
        }
        let shift = resid / free.len() as f64;
        for j in free {
            y[j] = (y[j] + shift).clamp(0.0, 1.0);
        }
    }
    Ok(y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubproblemOptions {
    /// Target projected-gradient residual `η`.
    pub tol: f64,
    pub max_steps: usize,
    pub armijo: f64,
    pub initial_step: f64,
}

impl Default for SubproblemOptions {
    fn default() -> Self {
        SubproblemOptions {
            tol: 1e-8,
            max_steps: 5_000,
            armijo: 1e-4,
            initial_step: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubproblemStatus {
    Converged,
    /// Step cap reached; the last (best) iterate is returned.
    StepCap,
    /// Line search could not make progress at floating-point resolution.
    Stalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSolution {
    pub y: Vec<f64>,
    pub objective: f64,
    /// `||y - P(y + g(y))||_inf` at the returned point.
    pub residual: f64,
    pub steps: usize,
    pub status: SubproblemStatus,
}

fn residual_inf(y: &[f64], projected: &[f64]) -> f64 {
    y.iter()
        .zip(projected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Backtracking along the projection arc `t -> P(y + t g)` from `t0`.
/// Returns the accepted point and step, or `None` if no step down to 1e-16
/// qualifies. `projected` is `P(y + g)` when already known.
#[allow(clippy::too_many_arguments)]
fn line_search(
    inst: &SubproblemInstance<'_>,
    y: &[f64],
    f: f64,
    g: &[f64],
    projected: Option<&[f64]>,
    t0: f64,
    opts: &SubproblemOptions,
    scratch: &mut Vec<f64>,
) -> Result<Option<(Vec<f64>, f64)>> {
    let k = inst.k;
    let mut g_trial = vec![0.0; y.len()];
    let mut t = t0;
    while t >= 1e-16 {
        let trial = match projected {
            Some(p) if t == 1.0 => p.to_vec(),
            _ => {
                let v: Vec<f64> = y.iter().zip(g).map(|(a, b)| a + t * b).collect();
                project_capped_simplex(&v, k)?
            }
        };
        let ascent: f64 = g
            .iter()
            .zip(trial.iter().zip(y))
            .map(|(gi, (a, b))| gi * (a - b))
            .sum();
        let f_trial = inst.objective_with(&trial, scratch);
        if f_trial >= f + opts.armijo * ascent {
            return Ok(Some((trial, t)));
        }
        if ascent > 1e-10 * (1.0 + f.abs()) {
            t *= 0.5;
            continue;
        }
        inst.gradient_with(&trial, scratch, &mut g_trial);
        // Near the optimum the predicted gain drops below rounding noise
        // in f. By concavity f(trial) >= f(y) whenever the supergradient
        // at `trial` still points along the step, which is exact there.
        let along: f64 = g_trial
            .iter()
            .zip(trial.iter().zip(y))
            .map(|(gi, (a, b))| gi * (a - b))
            .sum();
        if along >= 0.0 {
            return Ok(Some((trial, t)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Entries this close to a bound are snapped to it when polishing.
const SNAP: f64 = 1e-6;

/// Snaps near-binary entries of a converged point and keeps the snapped
/// point if it is feasible, no worse and still within tolerance.
fn polish(
    inst: &SubproblemInstance<'_>,
    y: Vec<f64>,
    f: f64,
    residual: f64,
    tol: f64,
    scratch: &mut Vec<f64>,
) -> Result<(Vec<f64>, f64, f64)> {
    let snapped: Vec<f64> = y
        .iter()
        .map(|&v| if v < SNAP { 0.0 } else if v > 1.0 - SNAP { 1.0 } else { v })
        .collect();
    if snapped == y {
        return Ok((y, f, residual));
    }
    let candidate = project_capped_simplex(&snapped, inst.k)?;
    let f_new = inst.objective_with(&candidate, scratch);
    if f_new < f {
        return Ok((y, f, residual));
    }
    let g = inst.gradient(&candidate);
    let full: Vec<f64> = candidate.iter().zip(&g).map(|(a, b)| a + b).collect();
    let r_new = residual_inf(&candidate, &project_capped_simplex(&full, inst.k)?);
    if r_new > tol {
        return Ok((y, f, residual));
    }
    Ok((candidate, f_new, r_new))
}

/// Projected gradient ascent from `y_init` (or the uniform point `k/m`).
///
/// Iterates are monotone in the objective, so the result is never worse
/// than the starting point.
pub fn solve_subproblem(
    inst: &SubproblemInstance<'_>,
    y_init: Option<&[f64]>,
    opts: &SubproblemOptions,
) -> Result<SubproblemSolution> {
    let m = inst.problem.candidate_count();
    let k = inst.k;
    let mut y = match y_init {
        Some(y0) if y0.len() != m => {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: y0.len(),
            })
        }
        Some(y0) if is_feasible(y0, k) => y0.to_vec(),
        Some(y0) => project_capped_simplex(y0, k)?,
        None => vec![k as f64 / m as f64; m],
    };

    let mut scratch = Vec::new();
    let mut g = vec![0.0; m];
    let mut g_new = vec![0.0; m];
    let mut f = inst.objective_with(&y, &mut scratch);
    inst.gradient_with(&y, &mut scratch, &mut g);
    let mut steps = 0;
    let mut trial;
    let mut last_step = opts.initial_step;

    loop {
        let full: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a + b).collect();
        let projected = project_capped_simplex(&full, k)?;
        let residual = residual_inf(&y, &projected);
        let done = |status, y: Vec<f64>, f, steps| SubproblemSolution {
            y,
            objective: f,
            residual,
            steps,
            status,
        };
        if residual <= opts.tol {
            let (y, f, residual) = polish(inst, y, f, residual, opts.tol, &mut scratch)?;
            return Ok(SubproblemSolution {
                y,
                objective: f,
                residual,
                steps,
                status: SubproblemStatus::Converged,
            });
        }
        if steps >= opts.max_steps {
            return Ok(done(SubproblemStatus::StepCap, y, f, steps));
        }

        let t0 = (2.0 * last_step).min(opts.initial_step);
        // On a face where some C_h y vanishes, the zero rule still certifies
        // optimality through the residual, but it is a poor search
        // direction: it hides the norm penalty of entering the face's
        // support. Steer with one-sided derivatives instead.
        let mut step = if inst.near_kink(&y, NORM_KINK, &mut scratch) {
            inst.gradient_near_kink(&y, NORM_KINK, true, &mut scratch, &mut g_new);
            line_search(inst, &y, f, &g_new, None, t0, opts, &mut scratch)?
        } else {
            line_search(inst, &y, f, &g, Some(&projected), t0, opts, &mut scratch)?
        };
        if step.is_none() && inst.near_kink(&y, KINK_FALLBACK, &mut scratch) {
            // The gradient is unreliable next to C_h y = 0, where the
            // objective is not differentiable. Retry with one-sided
            // derivatives there, which never predict a false ascent.
            inst.gradient_near_kink(&y, KINK_FALLBACK, true, &mut scratch, &mut g_new);
            step = line_search(inst, &y, f, &g_new, None, opts.initial_step, opts, &mut scratch)?;
        }
        let Some((next, t)) = step else {
            return Ok(done(SubproblemStatus::Stalled, y, f, steps));
        };
        trial = next;
        last_step = t;
        std::mem::swap(&mut y, &mut trial);
        f = inst.objective_with(&y, &mut scratch);
        inst.gradient_with(&y, &mut scratch, &mut g);
        steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CandidateProfileMatrix, DiversityPreference, UserId};

    fn identity_problem(m: usize, counts: Vec<u64>) -> MatchingProblem {
        let cols: Vec<Vec<u32>> = (0..m as u32).map(|q| vec![q]).collect();
        let refs: Vec<&[u32]> = cols.iter().map(Vec::as_slice).collect();
        let c = CandidateProfileMatrix::from_columns(0, m, &refs).unwrap();
        let d = DiversityPreference {
            user: UserId::from("u"),
            dimension: 0,
            counts,
        };
        MatchingProblem::new(&[d], &[c]).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_capped_simplex(&[10.0, -10.0, 0.5], 1).unwrap(), vec![1.0, 0.0, 0.0]);
        let y = project_capped_simplex(&[0.5, 0.5], 1).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-12 && (y[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_bad_k() {
        assert!(matches!(
            project_capped_simplex(&[1.0, 2.0], 2),
            Err(Error::InfeasibleK { .. })
        ));
        assert!(project_capped_simplex(&[1.0, 2.0], 0).is_err());
        assert!(project_capped_simplex(&[f64::NAN, 2.0], 1).is_err());
    }

    #[test]
    fn projection_is_idempotent_on_feasible_points() {
        let y = [0.25, 0.75, 1.0, 0.0];
        let p = project_capped_simplex(&y, 2).unwrap();
        for (a, b) in y.iter().zip(&p) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn aligned_selection_objective() {
        let p = identity_problem(3, vec![1, 0, 0]);
        let inst = SubproblemInstance::new(&p, &[1.0], &[0.0], 1).unwrap();
        assert!((inst.objective(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(inst.objective(&[0.0; 3]), 0.0);
    }

    #[test]
    fn instance_validation() {
        let p = identity_problem(3, vec![1, 0, 0]);
        assert!(SubproblemInstance::new(&p, &[0.0], &[0.0], 1).is_err());
        assert!(SubproblemInstance::new(&p, &[1.0], &[-0.1], 1).is_err());
        assert!(SubproblemInstance::new(&p, &[1.0, 1.0], &[0.0], 1).is_err());
        assert!(SubproblemInstance::new(&p, &[1.0], &[0.0], 3).is_err());
    }

    #[test]
    fn linear_case_saturates_top_k() {
        // beta = 0 reduces to maximizing (C^T d̄)^T y: pick the two largest.
        let p = identity_problem(5, vec![1, 4, 2, 0, 3]);
        let inst = SubproblemInstance::new(&p, &[1.0], &[0.0], 2).unwrap();
        let sol = solve_subproblem(&inst, None, &SubproblemOptions::default()).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Converged);
        let expected = [0.0, 1.0, 0.0, 0.0, 1.0];
        for (a, b) in sol.y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{:?}", sol.y);
        }
    }

    #[test]
    fn k_equals_m_minus_one_on_identity() {
        let p = identity_problem(3, vec![1, 0, 0]);
        let inst = SubproblemInstance::new(&p, &[1.0], &[0.5], 2).unwrap();
        let sol = solve_subproblem(&inst, None, &SubproblemOptions::default()).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Converged);

        // Grid search over the slice {y1 + y2 + y3 = 2} at resolution 1e-3.
        let mut best = (f64::NEG_INFINITY, [0.0; 3]);
        let n = 1000;
        for i in 0..=n {
            for j in 0..=n {
                let (a, b) = (i as f64 / n as f64, j as f64 / n as f64);
                let c = 2.0 - a - b;
                if !(0.0..=1.0).contains(&c) {
                    continue;
                }
                let y = [a, b, c];
                let f = inst.objective(&y);
                if f > best.0 {
                    best = (f, y);
                }
            }
        }
        for (a, b) in sol.y.iter().zip([1.0, 0.5, 0.5]) {
            assert!((a - b).abs() < 1e-6, "{:?}", sol.y);
        }
        for (a, b) in sol.y.iter().zip(best.1) {
            assert!((a - b).abs() <= 1e-3 + 1e-9);
        }
        assert!(sol.objective >= best.0 - 1e-12);
    }

    #[test]
    fn infeasible_init_is_projected() {
        let p = identity_problem(3, vec![1, 2, 0]);
        let inst = SubproblemInstance::new(&p, &[1.0], &[0.2], 1).unwrap();
        let sol = solve_subproblem(&inst, Some(&[3.0, 0.0, 0.0]), &Default::default()).unwrap();
        assert!(is_feasible(&sol.y, 1));
        assert!(solve_subproblem(&inst, Some(&[1.0]), &Default::default()).is_err());
    }
}
