//! Diversification re-rankers used as comparison methods.
//!
//! All selectors work on candidate positions and return `k` distinct
//! indices in pick order. Likelihoods enter weighted sums min-max
//! normalized per candidate set; ties are broken by the raw likelihood, then
//! by position.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_all_matrices, CandidateSet, DiversityPreference, ProfileStore, UserId};
use crate::problem::MatchingProblem;

/// Ridge added to the DPP kernel diagonal.
pub const DPP_RIDGE: f64 = 1e-9;
/// Exponent scale of the DPP quality term.
pub const DPP_QUALITY_SCALE: f64 = 2.0;
/// Most negative pivot tolerated in the DPP Cholesky before erroring.
const PSD_TOLERANCE: f64 = -1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaselineMethod {
    #[serde(rename = "MMR")]
    Mmr,
    #[serde(rename = "MSD")]
    Msd,
    #[serde(rename = "DPP")]
    Dpp,
    #[serde(rename = "DiRec")]
    DiRec,
    #[serde(rename = "DPA-MMR")]
    DpaMmr,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Mmr => "MMR",
            BaselineMethod::Msd => "MSD",
            BaselineMethod::Dpp => "DPP",
            BaselineMethod::DiRec => "DiRec",
            BaselineMethod::DpaMmr => "DPA-MMR",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Diversity weight for MMR, MSD and DPP.
    #[serde(default)]
    pub theta: f64,
    /// Preference-matching weight for DPA-MMR.
    #[serde(default)]
    pub sigma: f64,
    pub k: usize,
}

impl BaselineConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        check_weight("theta", self.theta)?;
        check_weight("sigma", self.sigma)?;
        check_k(self.k, m)
    }
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {w} must lie in [0, 1]")))
    }
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        Err(Error::InfeasibleK { k, m })
    } else {
        Ok(())
    }
}

/// `1 - Jaccard` of the `(dimension, value)` sets; two empty profiles give 0.
pub fn profile_dissimilarity(profiles: &ProfileStore, a: &UserId, b: &UserId) -> f64 {
    let sa: BTreeSet<(usize, u32)> = profiles.value_pairs(a).collect();
    let sb: BTreeSet<(usize, u32)> = profiles.value_pairs(b).collect();
    set_dissimilarity(&sa, &sb)
}

fn set_dissimilarity(a: &BTreeSet<(usize, u32)>, b: &BTreeSet<(usize, u32)>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

/// Symmetric `m x m` dissimilarities with zero diagonal, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseDissimilarity {
    m: usize,
    values: Vec<f64>,
}

impl PairwiseDissimilarity {
    pub fn new(candidates: &CandidateSet, profiles: &ProfileStore) -> Self {
        let sets: Vec<BTreeSet<(usize, u32)>> = candidates
            .candidates()
            .iter()
            .map(|c| profiles.value_pairs(c).collect())
            .collect();
        let m = sets.len();
        let mut values = vec![0.0; m * m];
        for i in 0..m {
            for j in i + 1..m {
                let d = set_dissimilarity(&sets[i], &sets[j]);
                values[i * m + j] = d;
                values[j * m + i] = d;
            }
        }
        PairwiseDissimilarity { m, values }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }
}

/// Position among `remaining` with the largest score; ties go to the higher
/// raw likelihood, then the lower position.
fn argmax(remaining: &[usize], score: impl Fn(usize) -> f64, likelihoods: &[f64]) -> usize {
    let mut best = remaining[0];
    let mut best_score = score(best);
    for &i in &remaining[1..] {
        let s = score(i);
        let better = match s.total_cmp(&best_score) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => match likelihoods[i].total_cmp(&likelihoods[best]) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => i < best,
            },
        };
        if better {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Generic greedy loop: `score(i, selected)` is the marginal score of `i`.
fn greedy(
    m: usize,
    k: usize,
    likelihoods: &[f64],
    mut score: impl FnMut(usize, &[usize]) -> f64,
) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut selected = Vec::with_capacity(k);
    while selected.len() < k {
        let mut scores = vec![0.0; m];
        for &i in &remaining {
            scores[i] = score(i, &selected);
        }
        let pick = argmax(&remaining, |i| scores[i], likelihoods);
        remaining.retain(|&r| r != pick);
        selected.push(pick);
    }
    selected
}

/// The `k` most likely candidates, ties by position.
pub fn top_k_by_likelihood(candidates: &CandidateSet, k: usize) -> Result<Vec<usize>> {
    check_k(k, candidates.len())?;
    let mut order = candidates.likelihood_order();
    order.truncate(k);
    Ok(order)
}

/// Maximal marginal relevance: the first pick is the likelihood maximum,
/// later picks maximize `(1 - theta) l(c) + theta * mean_s dis(c, s)`.
pub fn mmr_select(candidates: &CandidateSet, profiles: &ProfileStore, theta: f64, k: usize) -> Result<Vec<usize>> {
    check_weight("theta", theta)?;
    check_k(k, candidates.len())?;
    let dis = PairwiseDissimilarity::new(candidates, profiles);
    Ok(mmr_with(&dis, candidates, theta, k))
}

pub fn mmr_with(dis: &PairwiseDissimilarity, candidates: &CandidateSet, theta: f64, k: usize) -> Vec<usize> {
    let raw = candidates.likelihoods();
    let l = candidates.normalized_likelihoods();
    greedy(candidates.len(), k, raw, |c, selected| {
        if selected.is_empty() {
            return l[c];
        }
        let mean = selected.iter().map(|&s| dis.get(c, s)).sum::<f64>() / selected.len() as f64;
        (1.0 - theta) * l[c] + theta * mean
    })
}

/// Max-sum diversification: each pick adds the largest marginal gain of
/// `(1 - theta) sum l + theta * sum_{pairs} dis`.
pub fn msd_select(candidates: &CandidateSet, profiles: &ProfileStore, theta: f64, k: usize) -> Result<Vec<usize>> {
    check_weight("theta", theta)?;
    check_k(k, candidates.len())?;
    let dis = PairwiseDissimilarity::new(candidates, profiles);
    Ok(msd_with(&dis, candidates, theta, k))
}

pub fn msd_with(dis: &PairwiseDissimilarity, candidates: &CandidateSet, theta: f64, k: usize) -> Vec<usize> {
    let raw = candidates.likelihoods();
    let l = candidates.normalized_likelihoods();
    greedy(candidates.len(), k, raw, |c, selected| {
        (1.0 - theta) * l[c] + theta * selected.iter().map(|&s| dis.get(c, s)).sum::<f64>()
    })
}

/// DPP quality weights for diversity weight `theta`.
pub fn dpp_quality(normalized: &[f64], theta: f64) -> Vec<f64> {
    if theta >= 1.0 {
        return vec![1.0; normalized.len()];
    }
    let ratio = (1.0 - theta) / theta;
    normalized
        .iter()
        .map(|&l| (DPP_QUALITY_SCALE * ratio * l).exp())
        .collect()
}

/// Row-major `L = diag(q) S diag(q) + ridge I` with `S = 1 - dis`.
pub fn dpp_kernel(dis: &PairwiseDissimilarity, quality: &[f64]) -> Vec<f64> {
    let m = dis.len();
    let mut kernel = vec![0.0; m * m];
    for i in 0..m {
        kernel[i * m + i] = quality[i] * quality[i] + DPP_RIDGE;
        for j in i + 1..m {
            let v = quality[i] * (1.0 - dis.get(i, j)) * quality[j];
            kernel[i * m + j] = v;
            kernel[j * m + i] = v;
        }
    }
    kernel
}

/// Greedy MAP inference on the DPP kernel by incremental Cholesky: each step
/// adds the item with the largest log-determinant gain.
pub fn dpp_select(candidates: &CandidateSet, profiles: &ProfileStore, theta: f64, k: usize) -> Result<Vec<usize>> {
    check_weight("theta", theta)?;
    check_k(k, candidates.len())?;
    if theta == 0.0 {
        return top_k_by_likelihood(candidates, k);
    }
    let dis = PairwiseDissimilarity::new(candidates, profiles);
    dpp_with(&dis, candidates, theta, k)
}

pub fn dpp_with(dis: &PairwiseDissimilarity, candidates: &CandidateSet, theta: f64, k: usize) -> Result<Vec<usize>> {
    if theta == 0.0 {
        return top_k_by_likelihood(candidates, k);
    }
    let quality = dpp_quality(&candidates.normalized_likelihoods(), theta);
    let kernel = dpp_kernel(dis, &quality);
    let (picks, _) = dpp_greedy(&kernel, candidates.len(), k, candidates.likelihoods())?;
    Ok(picks)
}

/// Greedy selection on a row-major PSD kernel. Also returns the squared
/// pivot (determinant ratio) of each pick.
pub fn dpp_greedy(kernel: &[f64], m: usize, k: usize, likelihoods: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut d2: Vec<f64> = (0..m).map(|i| kernel[i * m + i]).collect();
    let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(k); m];
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut picks = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    while picks.len() < k {
        let j = argmax(&remaining, |i| d2[i], likelihoods);
        if d2[j] < PSD_TOLERANCE {
            return Err(Error::NonPsdKernel {
                pivot: picks.len(),
                value: d2[j],
            });
        }
        let dj = d2[j].max(f64::MIN_POSITIVE).sqrt();
        remaining.retain(|&r| r != j);
        for &i in &remaining {
            let dot: f64 = rows[j].iter().zip(&rows[i]).map(|(a, b)| a * b).sum();
            let e = (kernel[j * m + i] - dot) / dj;
            rows[i].push(e);
            d2[i] -= e * e;
        }
        picks.push(j);
        gains.push(d2[j]);
    }
    Ok((picks, gains))
}

/// Greedy k-center clustering on profile dissimilarity, returning the most
/// likely member of each cluster in center order.
pub fn direc_select(candidates: &CandidateSet, profiles: &ProfileStore, k: usize) -> Result<Vec<usize>> {
    check_k(k, candidates.len())?;
    let dis = PairwiseDissimilarity::new(candidates, profiles);
    Ok(direc_with(&dis, candidates, k))
}

pub fn direc_with(dis: &PairwiseDissimilarity, candidates: &CandidateSet, k: usize) -> Vec<usize> {
    let m = candidates.len();
    let raw = candidates.likelihoods();
    let mut centers = vec![candidates.likelihood_order()[0]];
    let mut nearest: Vec<f64> = (0..m).map(|i| dis.get(i, centers[0])).collect();
    while centers.len() < k {
        let remaining: Vec<usize> = (0..m).filter(|i| !centers.contains(i)).collect();
        // Farthest point; ties by position as the clustering is likelihood-blind.
        let mut next = remaining[0];
        for &i in &remaining[1..] {
            if nearest[i] > nearest[next] {
                next = i;
            }
        }
        centers.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dis.get(i, next));
        }
    }
    let mut clusters: Vec<Vec<usize>> = centers.iter().map(|&c| vec![c]).collect();
    for i in (0..m).filter(|i| !centers.contains(i)) {
        let mut best = 0;
        for c in 1..k {
            if dis.get(i, centers[c]) < dis.get(i, centers[best]) {
                best = c;
            }
        }
        clusters[best].push(i);
    }
    clusters
        .iter()
        .map(|members| {
            let mut sorted = members.clone();
            sorted.sort_unstable();
            argmax(&sorted, |i| raw[i], raw)
        })
        .collect()
}

/// Greedy preference matching: each pick maximizes
/// `(1 - sigma) l(c) + sigma * Delta(c)`, where `Delta` is the gain in the
/// matching objective divided by `H_eff`.
pub fn dpa_mmr_select(
    prefs: &[DiversityPreference],
    candidates: &CandidateSet,
    profiles: &ProfileStore,
    sigma: f64,
    k: usize,
) -> Result<Vec<usize>> {
    check_weight("sigma", sigma)?;
    check_k(k, candidates.len())?;
    let matrices = build_all_matrices(candidates, profiles)?;
    let problem = MatchingProblem::new(prefs, &matrices)?;
    dpa_mmr_with(&problem, candidates, sigma, k)
}

pub fn dpa_mmr_with(problem: &MatchingProblem, candidates: &CandidateSet, sigma: f64, k: usize) -> Result<Vec<usize>> {
    let m = candidates.len();
    if problem.candidate_count() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            actual: problem.candidate_count(),
        });
    }
    let h = problem.h_effective() as f64;
    let raw = candidates.likelihoods();
    let l = candidates.normalized_likelihoods();
    let mut y = vec![0.0; m];
    let mut remaining: Vec<usize> = (0..m).collect();
    let mut selected = Vec::with_capacity(k);
    let mut current = 0.0;
    while selected.len() < k {
        let mut objectives = vec![0.0; m];
        for &c in &remaining {
            y[c] = 1.0;
            objectives[c] = problem.objective(&y)?;
            y[c] = 0.0;
        }
        let pick = argmax(
            &remaining,
            |c| (1.0 - sigma) * l[c] + sigma * (objectives[c] - current) / h,
            raw,
        );
        y[pick] = 1.0;
        current = objectives[pick];
        remaining.retain(|&r| r != pick);
        selected.push(pick);
    }
    Ok(selected)
}

/// Dispatches a baseline configuration.
pub fn run_baseline(
    config: &BaselineConfig,
    prefs: &[DiversityPreference],
    candidates: &CandidateSet,
    profiles: &ProfileStore,
) -> Result<Vec<usize>> {
    config.validate(candidates.len())?;
    let k = config.k;
    match config.method {
        BaselineMethod::Mmr => mmr_select(candidates, profiles, config.theta, k),
        BaselineMethod::Msd => msd_select(candidates, profiles, config.theta, k),
        BaselineMethod::Dpp => dpp_select(candidates, profiles, config.theta, k),
        BaselineMethod::DiRec => direc_select(candidates, profiles, k),
        BaselineMethod::DpaMmr => dpa_mmr_select(prefs, candidates, profiles, config.sigma, k),
    }
}
