//! Recommendation quality metrics and paired comparisons.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{diversity_distribution, CandidateProfileMatrix, DiversityPreference, UserId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub user: UserId,
    /// Ranked recommendations, best first.
    pub recommended: Vec<UserId>,
    /// Friends the user actually added in the test period.
    pub actually_added: BTreeSet<UserId>,
    pub k: usize,
}

impl EvaluationRecord {
    pub fn new(user: UserId, recommended: Vec<UserId>, actually_added: BTreeSet<UserId>) -> Result<Self> {
        let k = recommended.len();
        if k == 0 {
            return Err(Error::InvalidParameter(format!("empty recommendation list for `{user}`")));
        }
        let distinct: BTreeSet<&UserId> = recommended.iter().collect();
        if distinct.len() != k {
            return Err(Error::InvalidParameter(format!("duplicate recommendation for `{user}`")));
        }
        Ok(EvaluationRecord {
            user,
            recommended,
            actually_added,
            k,
        })
    }

    pub fn true_positives(&self) -> usize {
        self.recommended
            .iter()
            .filter(|r| self.actually_added.contains(*r))
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub true_positives: usize,
    pub precision: f64,
    /// `None` when the user added no friends.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn precision_recall_f1(record: &EvaluationRecord) -> PrecisionRecall {
    let tp = record.true_positives();
    let precision = tp as f64 / record.k as f64;
    let p = record.actually_added.len();
    let recall = (p > 0).then(|| tp as f64 / p as f64);
    let f1 = recall.map(|r| {
        if precision + r == 0.0 {
            0.0
        } else {
            2.0 * precision * r / (precision + r)
        }
    });
    PrecisionRecall {
        true_positives: tp,
        precision,
        recall,
        f1,
    }
}

/// Binary-relevance DCG: a relevant item at rank `j` adds `1 / log2(j + 1)`.
pub fn dcg(record: &EvaluationRecord) -> f64 {
    record
        .recommended
        .iter()
        .enumerate()
        .filter(|(_, r)| record.actually_added.contains(*r))
        .map(|(j, _)| 1.0 / ((j + 2) as f64).log2())
        .sum()
}

/// Mean cosine between preference and recommended diversity over
/// dimensions with a nonzero preference; `None` if there are none.
/// `selected` holds candidate positions (columns of `matrices`).
pub fn dpms(
    prefs: &[DiversityPreference],
    matrices: &[CandidateProfileMatrix],
    selected: &[usize],
) -> Result<Option<f64>> {
    if prefs.len() != matrices.len() {
        return Err(Error::LengthMismatch {
            expected: prefs.len(),
            actual: matrices.len(),
        });
    }
    if selected.is_empty() {
        return Err(Error::InvalidParameter("empty recommendation list".into()));
    }
    let mut sum = 0.0;
    let mut included = 0usize;
    for (d, c) in prefs.iter().zip(matrices) {
        if d.is_zero() {
            continue;
        }
        included += 1;
        let m = c.shape().1;
        let mut y = vec![0.0; m];
        for &q in selected {
            if q >= m {
                return Err(Error::InvalidParameter(format!("candidate index {q} out of range for m = {m}")));
            }
            y[q] = 1.0;
        }
        let r = diversity_distribution(c, &y)?.vector;
        if r.len() != d.counts.len() {
            return Err(Error::LengthMismatch {
                expected: d.counts.len(),
                actual: r.len(),
            });
        }
        let dot: f64 = d.counts.iter().zip(&r).map(|(&a, b)| a as f64 * b).sum();
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rn > 0.0 {
            sum += dot / (d.norm() * rn);
        }
    }
    Ok((included > 0).then(|| sum / included as f64))
}

/// Per-user metric values for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: UserId,
    pub precision: f64,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub dcg: f64,
    pub dpms: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Dcg,
    Dpms,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Precision, Metric::Recall, Metric::F1, Metric::Dcg, Metric::Dpms];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Dcg => "dcg",
            Metric::Dpms => "dpms",
        }
    }

    pub fn of(self, m: &UserMetrics) -> Option<f64> {
        match self {
            Metric::Precision => Some(m.precision),
            Metric::Recall => m.recall,
            Metric::F1 => m.f1,
            Metric::Dcg => Some(m.dcg),
            Metric::Dpms => m.dpms,
        }
    }
}

/// Mean of the defined values with the count that entered it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanValue {
    pub mean: Option<f64>,
    pub n: usize,
}

pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> MeanValue {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    MeanValue {
        mean: (n > 0).then(|| sum / n as f64),
        n,
    }
}

pub fn metric_means(records: &[UserMetrics]) -> BTreeMap<Metric, MeanValue> {
    Metric::ALL
        .iter()
        .map(|&metric| (metric, mean_defined(records.iter().map(|r| metric.of(r)))))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    /// Mean of `a - b`.
    pub mean_difference: f64,
    pub t_statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    /// The differences have zero variance; `t` is 0 or infinite.
    pub degenerate: bool,
}

/// Paired t-test of `a` against `b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    // Spreads at rounding level of the differences count as zero.
    let scale = diffs.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
    if sd <= 1e-14 * scale || sd == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(PairedTest {
            n,
            mean_difference: mean,
            t_statistic: t,
            p_value: p,
            degenerate: true,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(PairedTest {
        n,
        mean_difference: mean,
        t_statistic: t,
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
        degenerate: false,
    })
}

/// Paired test of one metric between two methods evaluated on the same
/// users. Users where either value is undefined are dropped.
pub fn paired_metric_test(a: &[UserMetrics], b: &[UserMetrics], metric: Metric) -> Result<PairedTest> {
    let ua: BTreeMap<&UserId, &UserMetrics> = a.iter().map(|r| (&r.user, r)).collect();
    let ub: BTreeMap<&UserId, &UserMetrics> = b.iter().map(|r| (&r.user, r)).collect();
    if ua.len() != a.len() || ub.len() != b.len() {
        return Err(Error::MismatchedUsers("duplicate user in metric records".into()));
    }
    if !ua.keys().eq(ub.keys()) {
        let only_a = ua.keys().filter(|u| !ub.contains_key(*u)).count();
        let only_b = ub.keys().filter(|u| !ua.contains_key(*u)).count();
        return Err(Error::MismatchedUsers(format!(
            "{only_a} users only in the first method, {only_b} only in the second"
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = ua
        .iter()
        .filter_map(|(u, ra)| Some((metric.of(ra)?, metric.of(ub[u])?)))
        .unzip();
    paired_t_test(&xs, &ys)
}

/// `(ours - theirs) / theirs * 100`; `None` when `theirs` is 0.
pub fn improvement_percent(ours: f64, theirs: f64) -> Option<f64> {
    (theirs != 0.0).then(|| (ours - theirs) / theirs * 100.0)
}
