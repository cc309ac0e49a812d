//! Batch runs driven by a TOML manifest: recommend, evaluate, oracle gap.
//!
//! Per-user work runs on a rayon pool of the configured size. Each user's
//! solver seed is derived from the run seed and the user id, and outputs are
//! sorted before writing, so the bytes do not depend on the thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, PairwiseDissimilarity};
use crate::error::{Error, Result};
use crate::io::{Bundle, InputPaths, Truth};
use crate::metrics::{self, EvaluationRecord, MeanValue, Metric, PairedTest, UserMetrics};
use crate::model::{build_all_matrices, compute_all_preferences, CandidateSet, FriendScope, UserId};
use crate::oracle::{self, binomial, exhaustive_optimal, percent_gap};
use crate::problem::MatchingProblem;
use crate::solver::{solve_problem, SolveTrace, SolverConfig};

pub const RECOMMENDATIONS_FILE: &str = "recommendations.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodName {
    #[serde(rename = "DPA-LR")]
    DpaLr,
    /// Plain top-k by likelihood.
    #[serde(rename = "LL")]
    Likelihood,
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

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::DpaLr => "DPA-LR",
            MethodName::Likelihood => "LL",
            MethodName::Mmr => "MMR",
            MethodName::Msd => "MSD",
            MethodName::Dpp => "DPP",
            MethodName::DiRec => "DiRec",
            MethodName::DpaMmr => "DPA-MMR",
        }
    }

    fn uses_theta(self) -> bool {
        matches!(self, MethodName::Mmr | MethodName::Msd | MethodName::Dpp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: MethodName,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k: Vec<usize>,
    /// Candidate-set sizes; each user's set is cut to its `m` most likely
    /// candidates. Empty uses the sets as given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidate_sizes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthPolicy {
    /// Users without test-period additions are left out.
    #[default]
    Exclude,
    /// They are kept with every accuracy metric at 0.
    CountAsZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub method: MethodName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSpec {
    pub reference: Option<ReferenceSpec>,
    pub truth_policy: TruthPolicy,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            reference: Some(ReferenceSpec {
                method: MethodName::DpaLr,
                theta: None,
                sigma: None,
            }),
            truth_policy: TruthPolicy::Exclude,
        }
    }
}

fn default_parallelism() -> usize {
    1
}

fn default_budget() -> u64 {
    oracle::DEFAULT_BUDGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Solve only the first `max_users` users by id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_users: Option<usize>,
    #[serde(default)]
    pub friend_scope: FriendScope,
    #[serde(default = "default_budget")]
    pub oracle_budget: u64,
    /// Write full solver traces next to the recommendations.
    #[serde(default)]
    pub write_traces: bool,
    /// Warn about candidates that are not two hops from their user.
    #[serde(default)]
    pub two_hop_check: bool,
    pub grid: GridSpec,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    /// Parses a manifest and resolves its relative paths against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let mut manifest = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve_paths(base);
        Ok(manifest)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let inputs = &mut self.inputs;
        resolve(base, &mut inputs.edges);
        resolve(base, &mut inputs.profiles);
        resolve(base, &mut inputs.candidates);
        if let Some(p) = inputs.previous_edges.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = inputs.truth.as_mut() {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Manifest(msg));
        let inputs = &self.inputs;
        let mut paths = vec![&inputs.edges, &inputs.profiles, &inputs.candidates];
        paths.extend(inputs.previous_edges.iter());
        paths.extend(inputs.truth.iter());
        if let Some(p) = paths.iter().find(|p| !p.exists()) {
            return bad(format!("input {} does not exist", p.display()));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.grid.k.is_empty() || self.grid.k.contains(&0) {
            return bad("k grid must be nonempty and positive".into());
        }
        if self.grid.candidate_sizes.contains(&0) {
            return bad("candidate sizes must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("no methods listed".into());
        }
        for m in &self.methods {
            if m.name.uses_theta() && m.theta.is_empty() {
                return bad(format!("{} needs a theta grid", m.name.as_str()));
            }
            if m.name == MethodName::DpaMmr && m.sigma.is_empty() {
                return bad("DPA-MMR needs a sigma grid".into());
            }
            if let Some(w) = m.theta.iter().chain(&m.sigma).find(|w| !(0.0..=1.0).contains(*w)) {
                return bad(format!("{}: weight {w} outside [0, 1]", m.name.as_str()));
            }
        }
        self.solver.validate()
    }

    /// Method settings crossed with the `k` grid, for one candidate size.
    fn points(&self, candidates: Option<usize>) -> Vec<(MethodName, ConfigPoint)> {
        let mut out = Vec::new();
        for &k in &self.grid.k {
            for spec in &self.methods {
                let base = ConfigPoint {
                    k,
                    candidates,
                    theta: None,
                    sigma: None,
                };
                if spec.name.uses_theta() {
                    out.extend(spec.theta.iter().map(|&t| (spec.name, ConfigPoint { theta: Some(t), ..base })));
                } else if spec.name == MethodName::DpaMmr {
                    out.extend(spec.sigma.iter().map(|&s| (spec.name, ConfigPoint { sigma: Some(s), ..base })));
                } else {
                    out.push((spec.name, base));
                }
            }
        }
        out
    }
}

/// One point of the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl ConfigPoint {
    fn sort_key(&self) -> (usize, usize, u64, u64) {
        let bits = |w: Option<f64>| w.map_or(0, |w| w.to_bits().wrapping_add(1));
        (self.candidates.unwrap_or(0), self.k, bits(self.theta), bits(self.sigma))
    }

    pub fn label(&self) -> String {
        let mut s = format!("k={}", self.k);
        if let Some(m) = self.candidates {
            write!(s, ",m={m}").unwrap();
        }
        if let Some(t) = self.theta {
            write!(s, ",theta={t}").unwrap();
        }
        if let Some(g) = self.sigma {
            write!(s, ",sigma={g}").unwrap();
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Matching objective of the selection, in `[0, H_eff]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dpms: Option<f64>,
    pub mean_likelihood: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_delta_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_effective: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_dimensions: Vec<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub negative_beta: bool,
}

impl TraceSummary {
    fn of(trace: &SolveTrace) -> Self {
        TraceSummary {
            iterations: Some(trace.iteration_count),
            converged: Some(trace.converged),
            final_delta_norm: Some(trace.final_delta_norm()),
            h_effective: Some(trace.h_effective),
            excluded_dimensions: trace.excluded_dimensions.clone(),
            negative_beta: trace.negative_beta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationRecord {
    pub user: UserId,
    pub method: MethodName,
    pub config: ConfigPoint,
    /// In rank order.
    pub selected: Vec<UserId>,
    pub scores: Scores,
    pub trace_summary: TraceSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub user: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigPoint>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub user: UserId,
    pub config: ConfigPoint,
    pub trace: SolveTrace,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecommendOutput {
    pub records: Vec<RecommendationRecord>,
    pub errors: Vec<ErrorRecord>,
    pub traces: Vec<TraceRecord>,
}

/// FNV-1a of the user id mixed with the run seed (splitmix64 finalizer).
pub fn user_seed(seed: u64, user: &UserId) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in user.as_str().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn selected_users(bundle: &Bundle, max_users: Option<usize>) -> Vec<(&UserId, &CandidateSet)> {
    bundle
        .candidates
        .iter()
        .take(max_users.unwrap_or(usize::MAX))
        .collect()
}

/// `full` cut to its `m` most likely candidates, or kept as is.
fn sized(full: &CandidateSet, m: Option<usize>) -> Result<CandidateSet> {
    match m {
        None => Ok(full.clone()),
        Some(m) if full.len() < m => Err(Error::InvalidCandidates {
            user: full.user.to_string(),
            reason: format!("{} candidates, fewer than the requested {m}", full.len()),
        }),
        Some(m) => Ok(full.top(m)),
    }
}

fn recommend_user(manifest: &RunManifest, bundle: &Bundle, user: &UserId, full: &CandidateSet) -> RecommendOutput {
    let mut out = RecommendOutput::default();
    let error = |method, config, e: &Error| ErrorRecord {
        user: user.clone(),
        method,
        config,
        message: e.to_string(),
    };
    let prefs = match compute_all_preferences(&bundle.graph, &bundle.profiles, user, manifest.friend_scope) {
        Ok(p) => p,
        Err(e) => {
            out.errors.push(error(None, None, &e));
            return out;
        }
    };
    let solver = manifest.solver.clone().with_seed(user_seed(manifest.seed, user));
    let sizes: Vec<Option<usize>> = if manifest.grid.candidate_sizes.is_empty() {
        vec![None]
    } else {
        manifest.grid.candidate_sizes.iter().map(|&m| Some(m)).collect()
    };
    for m in sizes {
        let points = manifest.points(m);
        let set = match sized(full, m) {
            Ok(s) => s,
            Err(e) => {
                out.errors
                    .extend(points.iter().map(|&(method, config)| error(Some(method), Some(config), &e)));
                continue;
            }
        };
        let matrices = match build_all_matrices(&set, &bundle.profiles) {
            Ok(c) => c,
            Err(e) => {
                out.errors.push(error(None, None, &e));
                continue;
            }
        };
        let problem = MatchingProblem::new(&prefs, &matrices);
        let needs_dissimilarity = points.iter().any(|(method, _)| {
            matches!(method, MethodName::Mmr | MethodName::Msd | MethodName::Dpp | MethodName::DiRec)
        });
        let dissimilarity = needs_dissimilarity.then(|| PairwiseDissimilarity::new(&set, &bundle.profiles));
        for (method, config) in points {
            let k = config.k;
            let mut summary = TraceSummary::default();
            let result: Result<Vec<usize>> = (|| {
                let dis = || dissimilarity.as_ref().expect("built for dissimilarity methods");
                if !(1..=set.len()).contains(&k) {
                    return Err(Error::InfeasibleK { k, m: set.len() });
                }
                match method {
                    MethodName::DpaLr => {
                        let problem = problem.as_ref().map_err(clone_error)?;
                        let rec = solve_problem(problem, &set, k, &solver)?;
                        summary = TraceSummary::of(&rec.trace);
                        if manifest.write_traces {
                            out.traces.push(TraceRecord {
                                user: user.clone(),
                                config,
                                trace: rec.trace,
                            });
                        }
                        Ok(rec.selected_indices)
                    }
                    MethodName::Likelihood => baselines::top_k_by_likelihood(&set, k),
                    MethodName::Mmr => Ok(baselines::mmr_with(dis(), &set, config.theta.unwrap_or(0.0), k)),
                    MethodName::Msd => Ok(baselines::msd_with(dis(), &set, config.theta.unwrap_or(0.0), k)),
                    MethodName::Dpp => baselines::dpp_with(dis(), &set, config.theta.unwrap_or(0.0), k),
                    MethodName::DiRec => Ok(baselines::direc_with(dis(), &set, k)),
                    MethodName::DpaMmr => {
                        let problem = problem.as_ref().map_err(clone_error)?;
                        baselines::dpa_mmr_with(problem, &set, config.sigma.unwrap_or(0.0), k)
                    }
                }
            })();
            match result {
                Ok(indices) => {
                    let objective = problem
                        .as_ref()
                        .ok()
                        .and_then(|p| p.objective_of_selection(&indices).ok());
                    let dpms = metrics::dpms(&prefs, &matrices, &indices).ok().flatten();
                    let lls = set.likelihoods();
                    let mean_likelihood = indices.iter().map(|&i| lls[i]).sum::<f64>() / indices.len() as f64;
                    out.records.push(RecommendationRecord {
                        user: user.clone(),
                        method,
                        config,
                        selected: indices.iter().map(|&i| set.candidates()[i].clone()).collect(),
                        scores: Scores {
                            objective,
                            dpms,
                            mean_likelihood,
                        },
                        trace_summary: summary,
                    });
                }
                Err(e) => out.errors.push(error(Some(method), Some(config), &e)),
            }
        }
    }
    out
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::NoIncludedDimensions => Error::NoIncludedDimensions,
        other => Error::InvalidParameter(other.to_string()),
    }
}

fn record_key(r: &RecommendationRecord) -> (&UserId, MethodName, (usize, usize, u64, u64)) {
    (&r.user, r.method, r.config.sort_key())
}

/// Runs every configured method for every user.
pub fn run_recommend(manifest: &RunManifest, bundle: &Bundle) -> Result<RecommendOutput> {
    if manifest.two_hop_check {
        let bad = crate::io::two_hop_violations(&bundle.graph, &bundle.candidates);
        if !bad.is_empty() {
            warn!("{} candidates are not two hops from their user", bad.len());
        }
    }
    let users = selected_users(bundle, manifest.max_users);
    let parts: Vec<RecommendOutput> = pool(manifest.parallelism)?.install(|| {
        users
            .par_iter()
            .map(|(u, set)| recommend_user(manifest, bundle, u, set))
            .collect()
    });
    let mut out = RecommendOutput::default();
    for p in parts {
        out.records.extend(p.records);
        out.errors.extend(p.errors);
        out.traces.extend(p.traces);
    }
    out.records.sort_by(|a, b| record_key(a).cmp(&record_key(b)));
    out.traces
        .sort_by(|a, b| (&a.user, a.config.sort_key()).cmp(&(&b.user, b.config.sort_key())));
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Writes recommendations, errors and (if requested) traces to `dir`.
pub fn write_recommend_output(dir: &Path, output: &RecommendOutput, traces: bool) -> Result<()> {
    write_jsonl(&dir.join(RECOMMENDATIONS_FILE), &output.records)?;
    write_jsonl(&dir.join(ERRORS_FILE), &output.errors)?;
    if traces {
        write_jsonl(&dir.join(TRACES_FILE), &output.traces)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    /// `(reference - this) / this * 100`.
    pub improvement_pct: Option<f64>,
    pub test: Option<PairedTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: MethodName,
    pub config: ConfigPoint,
    pub users: usize,
    pub means: BTreeMap<Metric, MeanValue>,
    /// Against the reference at the same `k` and candidate size.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub versus_reference: BTreeMap<Metric, MetricComparison>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MethodReport {
    pub fn label(&self) -> String {
        format!("{}({})", self.method.as_str(), self.config.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub truth_policy: TruthPolicy,
    pub reference: Option<ReferenceSpec>,
    pub excluded_users: usize,
    pub methods: Vec<MethodReport>,
}

fn is_reference(spec: &ReferenceSpec, method: MethodName, config: &ConfigPoint) -> bool {
    spec.method == method
        && spec.theta.is_none_or(|t| config.theta == Some(t))
        && spec.sigma.is_none_or(|s| config.sigma == Some(s))
}

/// Per-user metrics of one record, or `None` if the truth policy drops it.
fn user_metrics(record: &RecommendationRecord, truth: &Truth, policy: TruthPolicy) -> Result<Option<UserMetrics>> {
    let added = match (truth.get(&record.user), policy) {
        (Some(a), _) => a.clone(),
        (None, TruthPolicy::Exclude) => return Ok(None),
        (None, TruthPolicy::CountAsZero) => BTreeSet::new(),
    };
    let eval = EvaluationRecord::new(record.user.clone(), record.selected.clone(), added)?;
    let prf = metrics::precision_recall_f1(&eval);
    let zero_if_missing = |v: Option<f64>| match policy {
        TruthPolicy::CountAsZero => v.or(Some(0.0)),
        TruthPolicy::Exclude => v,
    };
    Ok(Some(UserMetrics {
        user: record.user.clone(),
        precision: prf.precision,
        recall: zero_if_missing(prf.recall),
        f1: zero_if_missing(prf.f1),
        dcg: metrics::dcg(&eval),
        dpms: record.scores.dpms,
    }))
}

/// Means per method and configuration, with paired tests against the
/// reference method.
pub fn run_evaluate(records: &[RecommendationRecord], truth: &Truth, spec: &EvaluationSpec) -> Result<EvaluationReport> {
    let mut groups: Vec<(MethodName, ConfigPoint, Vec<UserMetrics>)> = Vec::new();
    let mut excluded = BTreeSet::new();
    let mut sorted: Vec<&RecommendationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (a.method, a.config.sort_key(), &a.user).cmp(&(b.method, b.config.sort_key(), &b.user)));
    for r in sorted {
        let Some(m) = user_metrics(r, truth, spec.truth_policy)? else {
            excluded.insert(r.user.clone());
            continue;
        };
        match groups.last_mut() {
            Some((method, config, rows)) if *method == r.method && config.sort_key() == r.config.sort_key() => rows.push(m),
            _ => groups.push((r.method, r.config, vec![m])),
        }
    }
    let mut reports = Vec::with_capacity(groups.len());
    for (method, config, rows) in &groups {
        let mut report = MethodReport {
            method: *method,
            config: *config,
            users: rows.len(),
            means: metrics::metric_means(rows),
            versus_reference: BTreeMap::new(),
            notes: Vec::new(),
        };
        if let Some(reference) = &spec.reference {
            let matches: Vec<&(MethodName, ConfigPoint, Vec<UserMetrics>)> = groups
                .iter()
                .filter(|(m, c, _)| {
                    is_reference(reference, *m, c) && c.k == config.k && c.candidates == config.candidates
                })
                .collect();
            match matches.as_slice() {
                [] => report.notes.push("no reference run at this k and candidate size".into()),
                [(_, _, ref_rows)] => {
                    let ref_means = metrics::metric_means(ref_rows);
                    for metric in Metric::ALL {
                        let improvement_pct = match (ref_means[&metric].mean, report.means[&metric].mean) {
                            (Some(ours), Some(theirs)) => metrics::improvement_percent(ours, theirs),
                            _ => None,
                        };
                        let test = match metrics::paired_metric_test(ref_rows, rows, metric) {
                            Ok(t) => Some(t),
                            Err(e) => {
                                report.notes.push(format!("{}: {e}", metric.name()));
                                None
                            }
                        };
                        report.versus_reference.insert(metric, MetricComparison { improvement_pct, test });
                    }
                }
                _ => report
                    .notes
                    .push("reference is ambiguous; give its theta or sigma".into()),
            }
        }
        reports.push(report);
    }
    Ok(EvaluationReport {
        truth_policy: spec.truth_policy,
        reference: spec.reference,
        excluded_users: excluded.len(),
        methods: reports,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.4}"))
}

/// Aligned text table: means with the reference's improvement over each
/// method in parentheses, then two-sided paired p-values.
pub fn format_evaluation(report: &EvaluationReport) -> String {
    let header = ["method", "users", "precision", "recall", "f1", "dcg", "dpms"];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    let mut p_rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for m in &report.methods {
        let mut row = vec![m.label(), m.users.to_string()];
        let mut p_row = vec![m.label(), m.users.to_string()];
        for metric in Metric::ALL {
            let mut text = cell(m.means[&metric].mean);
            let cmp = m.versus_reference.get(&metric);
            if let Some(pct) = cmp.and_then(|c| c.improvement_pct) {
                write!(text, " ({pct:.2}%)").unwrap();
            }
            row.push(text);
            p_row.push(match cmp.and_then(|c| c.test) {
                Some(t) if t.degenerate => format!("{:.3e}*", t.p_value),
                Some(t) => format!("{:.3e}", t.p_value),
                None => "n/a".into(),
            });
        }
        rows.push(row);
        p_rows.push(p_row);
    }
    let mut out = String::new();
    if let Some(r) = &report.reference {
        writeln!(out, "reference: {}", r.method.as_str()).unwrap();
    }
    writeln!(out, "users without test-period additions: {} ({:?})", report.excluded_users, report.truth_policy).unwrap();
    out.push('\n');
    out.push_str(&align(&rows));
    out.push_str("\npaired t-test p-values against the reference (* zero-variance differences)\n");
    out.push_str(&align(&p_rows));
    out
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub candidates: usize,
    pub k: usize,
    pub users: usize,
    pub mean_optimal: f64,
    pub mean_approximate: f64,
    /// Gap of the two means, in percent of the optimal mean.
    pub objective_difference_pct: f64,
    /// Mean of the per-user percentage gaps.
    pub mean_user_gap_pct: f64,
    pub mean_overlap: f64,
    pub skipped_users: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGapReport {
    pub rows: Vec<GapRow>,
    pub notices: Vec<String>,
}

struct UserGap {
    optimal: f64,
    approximate: f64,
    overlap: usize,
}

fn gap_user(
    manifest: &RunManifest,
    bundle: &Bundle,
    user: &UserId,
    full: &CandidateSet,
    m: usize,
    k: usize,
) -> Result<UserGap> {
    let set = sized(full, Some(m))?;
    let prefs = compute_all_preferences(&bundle.graph, &bundle.profiles, user, manifest.friend_scope)?;
    let matrices = build_all_matrices(&set, &bundle.profiles)?;
    let problem = MatchingProblem::new(&prefs, &matrices)?;
    let solver = manifest.solver.clone().with_seed(user_seed(manifest.seed, user));
    let rec = solve_problem(&problem, &set, k, &solver)?;
    let best = exhaustive_optimal(&problem, k, manifest.oracle_budget)?;
    Ok(UserGap {
        optimal: best.optimal_objective,
        approximate: rec.objective_value,
        overlap: oracle::recommendation_overlap(&rec, &best),
    })
}

/// Compares the solver with exhaustive search at every `(m, k)` grid point.
pub fn run_oracle_gap(manifest: &RunManifest, bundle: &Bundle) -> Result<OracleGapReport> {
    if manifest.grid.candidate_sizes.is_empty() {
        return Err(Error::Manifest("oracle gap needs a candidate_sizes grid".into()));
    }
    let users = selected_users(bundle, manifest.max_users);
    let pool = pool(manifest.parallelism)?;
    let mut report = OracleGapReport {
        rows: Vec::new(),
        notices: Vec::new(),
    };
    for &m in &manifest.grid.candidate_sizes {
        for &k in &manifest.grid.k {
            let count = binomial(m, k);
            if k > m || count > u128::from(manifest.oracle_budget) {
                let notice = format!("skipped m={m}, k={k}: C({m}, {k}) = {count} exceeds the budget of {} or k > m", manifest.oracle_budget);
                warn!("{notice}");
                report.notices.push(notice);
                continue;
            }
            let results: Vec<Result<UserGap>> = pool.install(|| {
                users
                    .par_iter()
                    .map(|(u, set)| gap_user(manifest, bundle, u, set, m, k))
                    .collect()
            });
            let mut gaps = Vec::new();
            let mut skipped = 0;
            for (r, (u, _)) in results.into_iter().zip(&users) {
                match r {
                    Ok(g) => gaps.push(g),
                    Err(e) => {
                        skipped += 1;
                        report.notices.push(format!("m={m}, k={k}, user {u}: {e}"));
                    }
                }
            }
            if gaps.is_empty() {
                report.notices.push(format!("m={m}, k={k}: no user could be evaluated"));
                continue;
            }
            let n = gaps.len() as f64;
            let mean_optimal = gaps.iter().map(|g| g.optimal).sum::<f64>() / n;
            let mean_approximate = gaps.iter().map(|g| g.approximate).sum::<f64>() / n;
            let user_gaps: Vec<f64> = gaps.iter().filter_map(|g| percent_gap(g.optimal, g.approximate)).collect();
            report.rows.push(GapRow {
                candidates: m,
                k,
                users: gaps.len(),
                mean_optimal,
                mean_approximate,
                objective_difference_pct: percent_gap(mean_optimal, mean_approximate).unwrap_or(0.0),
                mean_user_gap_pct: if user_gaps.is_empty() {
                    0.0
                } else {
                    user_gaps.iter().sum::<f64>() / user_gaps.len() as f64
                },
                mean_overlap: gaps.iter().map(|g| g.overlap as f64).sum::<f64>() / n,
                skipped_users: skipped,
            });
        }
    }
    Ok(report)
}

pub fn format_oracle_gap(report: &OracleGapReport) -> String {
    let mut rows = vec![["|C|", "k", "users", "optimal", "approximate", "difference", "overlap"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for r in &report.rows {
        rows.push(vec![
            r.candidates.to_string(),
            r.k.to_string(),
            r.users.to_string(),
            format!("{:.4}", r.mean_optimal),
            format!("{:.4}", r.mean_approximate),
            format!("{:.2}%", r.objective_difference_pct),
            format!("{:.2}", r.mean_overlap),
        ]);
    }
    let mut out = align(&rows);
    for n in &report.notices {
        writeln!(out, "note: {n}").unwrap();
    }
    out
}
