//! Social network data model and the linear-algebra primitives built on it.
//!
//! Profiles are multi-valued and categorical: for each of `H` dimensions a
//! user holds a (possibly empty) set of value indices into that dimension's
//! vocabulary. Value strings are interned to dense indices on insertion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque user identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Self {
        UserId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_owned())
    }
}

impl From<String> for UserId {
    fn from(s: String) -> Self {
        UserId(s)
    }
}

/// Which friends count toward a diversity preference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "scope")]
pub enum FriendScope {
    #[default]
    All,
    /// Friends whose edge appeared within the last `window` periods,
    /// counting the graph's own period.
    Recent { window: u32 },
}

/// Undirected friendship graph at one snapshot.
///
/// Every edge remembers the period in which it first appeared so that the
/// recent-friends scope can be evaluated on a single snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SocialGraph {
    label: String,
    period: u32,
    adjacency: BTreeMap<UserId, BTreeMap<UserId, u32>>,
}

impl SocialGraph {
    pub fn new(label: impl Into<String>, period: u32) -> Self {
        SocialGraph {
            label: label.into(),
            period,
            adjacency: BTreeMap::new(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn period(&self) -> u32 {
        self.period
    }

    pub fn add_user(&mut self, user: UserId) {
        self.adjacency.entry(user).or_default();
    }

    /// Adds an edge first observed in the graph's own period.
    pub fn add_edge(&mut self, a: &UserId, b: &UserId) -> Result<bool> {
        self.add_edge_since(a, b, self.period)
    }

    /// Adds an undirected edge. Returns `false` if the edge already existed,
    /// in which case the earlier `since` is kept.
    pub fn add_edge_since(&mut self, a: &UserId, b: &UserId, since: u32) -> Result<bool> {
        if a == b {
            return Err(Error::InvalidParameter(format!("self-loop on `{a}`")));
        }
        let fresh = !self.has_edge(a, b);
        if fresh {
            self.adjacency
                .entry(a.clone())
                .or_default()
                .insert(b.clone(), since);
            self.adjacency
                .entry(b.clone())
                .or_default()
                .insert(a.clone(), since);
        }
        Ok(fresh)
    }

    pub fn has_edge(&self, a: &UserId, b: &UserId) -> bool {
        self.adjacency
            .get(a)
            .is_some_and(|nbrs| nbrs.contains_key(b))
    }

    pub fn contains_user(&self, user: &UserId) -> bool {
        self.adjacency.contains_key(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.adjacency.keys()
    }

    pub fn user_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeMap::len).sum::<usize>() / 2
    }

    /// Edges as `(a, b, since)` with `a < b`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (&UserId, &UserId, u32)> {
        self.adjacency.iter().flat_map(|(a, nbrs)| {
            nbrs.iter()
                .filter(move |(b, _)| a < *b)
                .map(move |(b, &since)| (a, b, since))
        })
    }

    pub fn neighbors(&self, user: &UserId) -> impl Iterator<Item = &UserId> {
        self.adjacency
            .get(user)
            .into_iter()
            .flat_map(|nbrs| nbrs.keys())
    }

    pub fn degree(&self, user: &UserId) -> usize {
        self.adjacency.get(user).map_or(0, BTreeMap::len)
    }

    /// Friends of `user` within `scope`.
    pub fn friends(&self, user: &UserId, scope: FriendScope) -> Result<Vec<&UserId>> {
        let nbrs = self
            .adjacency
            .get(user)
            .ok_or_else(|| Error::UnknownUser(user.to_string()))?;
        let cutoff = match scope {
            FriendScope::All => 0,
            FriendScope::Recent { window } => {
                if window == 0 {
                    return Err(Error::InvalidParameter(
                        "recent-friends window must be at least 1".into(),
                    ));
                }
                (self.period + 1).saturating_sub(window)
            }
        };
        Ok(nbrs
            .iter()
            .filter(|(_, &since)| since >= cutoff)
            .map(|(f, _)| f)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
struct Vocabulary {
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn intern(&mut self, value: &str) -> u32 {
        if let Some(&z) = self.index.get(value) {
            return z;
        }
        let z = self.values.len() as u32;
        self.values.push(value.to_owned());
        self.index.insert(value.to_owned(), z);
        z
    }
}

/// Multi-valued categorical profiles over `H` named dimensions.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ProfileStore {
    names: Vec<String>,
    vocabularies: Vec<Vocabulary>,
    /// Per user, per dimension: sorted, deduplicated value indices.
    assignments: BTreeMap<UserId, Vec<Vec<u32>>>,
}

impl ProfileStore {
    pub fn new<S: Into<String>>(dimensions: impl IntoIterator<Item = S>) -> Self {
        let mut store = ProfileStore::default();
        for name in dimensions {
            store.add_dimension(name);
        }
        store
    }

    /// Returns the index of `name`, adding the dimension if it is new.
    pub fn add_dimension(&mut self, name: impl Into<String>) -> usize {
        let name = name.into();
        if let Some(h) = self.dimension_index(&name) {
            return h;
        }
        self.names.push(name);
        self.vocabularies.push(Vocabulary::default());
        for dims in self.assignments.values_mut() {
            dims.push(Vec::new());
        }
        self.names.len() - 1
    }

    pub fn dimension_count(&self) -> usize {
        self.names.len()
    }

    pub fn dimension_names(&self) -> &[String] {
        &self.names
    }

    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn check_dimension(&self, h: usize) -> Result<()> {
        if h >= self.names.len() {
            return Err(Error::DimensionOutOfRange {
                index: h,
                count: self.names.len(),
            });
        }
        Ok(())
    }

    /// Vocabulary size `Z_h`.
    pub fn value_count(&self, h: usize) -> usize {
        self.vocabularies.get(h).map_or(0, |v| v.values.len())
    }

    pub fn value_name(&self, h: usize, z: u32) -> Option<&str> {
        self.vocabularies
            .get(h)
            .and_then(|v| v.values.get(z as usize))
            .map(String::as_str)
    }

    pub fn value_index(&self, h: usize, value: &str) -> Option<u32> {
        self.vocabularies.get(h).and_then(|v| v.index.get(value).copied())
    }

    /// Interns `value` in dimension `h` without assigning it to anyone.
    pub fn intern(&mut self, h: usize, value: &str) -> Result<u32> {
        self.check_dimension(h)?;
        Ok(self.vocabularies[h].intern(value))
    }

    /// Registers a user with an empty profile.
    pub fn ensure_user(&mut self, user: &UserId) {
        let h = self.names.len();
        self.assignments
            .entry(user.clone())
            .or_insert_with(|| vec![Vec::new(); h]);
    }

    /// Assigns an already-interned value index. Repeated assignment is a no-op.
    pub fn assign(&mut self, user: &UserId, h: usize, z: u32) -> Result<()> {
        self.check_dimension(h)?;
        if z as usize >= self.value_count(h) {
            return Err(Error::InvalidParameter(format!(
                "value index {z} out of range for dimension {h} (Z = {})",
                self.value_count(h)
            )));
        }
        self.ensure_user(user);
        let held = &mut self.assignments.get_mut(user).expect("just inserted")[h];
        if let Err(pos) = held.binary_search(&z) {
            held.insert(pos, z);
        }
        Ok(())
    }

    /// Interns and assigns `value` in the named dimension, creating the
    /// dimension if needed.
    pub fn assign_value(&mut self, user: &UserId, dimension: &str, value: &str) -> u32 {
        let h = self.add_dimension(dimension);
        let z = self.vocabularies[h].intern(value);
        self.assign(user, h, z).expect("interned value is in range");
        z
    }

    pub fn has_user(&self, user: &UserId) -> bool {
        self.assignments.contains_key(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.assignments.keys()
    }

    /// Value indices `user` holds in dimension `h`; empty for unknown users.
    pub fn values(&self, user: &UserId, h: usize) -> &[u32] {
        self.assignments
            .get(user)
            .and_then(|dims| dims.get(h))
            .map_or(&[], Vec::as_slice)
    }

    /// `(dimension, value)` pairs held by `user` across all dimensions.
    pub fn value_pairs(&self, user: &UserId) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.assignments
            .get(user)
            .into_iter()
            .flat_map(|dims| {
                dims.iter()
                    .enumerate()
                    .flat_map(|(h, zs)| zs.iter().map(move |&z| (h, z)))
            })
    }

    /// Total number of `(user, dimension, value)` assignments.
    pub fn assignment_count(&self) -> usize {
        self.assignments
            .values()
            .map(|dims| dims.iter().map(Vec::len).sum::<usize>())
            .sum()
    }

    /// `(user, dimension name, value name)` triples in sorted order; a
    /// vocabulary-order-independent view used for semantic comparison.
    pub fn to_records(&self) -> BTreeSet<(String, String, String)> {
        self.assignments
            .iter()
            .flat_map(|(u, dims)| {
                dims.iter().enumerate().flat_map(move |(h, zs)| {
                    zs.iter().map(move |&z| {
                        (
                            u.to_string(),
                            self.names[h].clone(),
                            self.vocabularies[h].values[z as usize].clone(),
                        )
                    })
                })
            })
            .collect()
    }
}

/// Per-dimension count of a user's friends holding each value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityPreference {
    pub user: UserId,
    pub dimension: usize,
    pub counts: Vec<u64>,
}

impl DiversityPreference {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    pub fn norm(&self) -> f64 {
        self.counts
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Counts, for dimension `h`, how many of `user`'s friends hold each value.
/// A friend holding several values increments each of them.
pub fn compute_diversity_preference(
    graph: &SocialGraph,
    profiles: &ProfileStore,
    user: &UserId,
    dimension: usize,
    scope: FriendScope,
) -> Result<DiversityPreference> {
    profiles.check_dimension(dimension)?;
    let friends = graph.friends(user, scope)?;
    let mut counts = vec![0u64; profiles.value_count(dimension)];
    for friend in friends {
        for &z in profiles.values(friend, dimension) {
            counts[z as usize] += 1;
        }
    }
    Ok(DiversityPreference {
        user: user.clone(),
        dimension,
        counts,
    })
}

/// Preferences for every dimension of the store.
pub fn compute_all_preferences(
    graph: &SocialGraph,
    profiles: &ProfileStore,
    user: &UserId,
    scope: FriendScope,
) -> Result<Vec<DiversityPreference>> {
    (0..profiles.dimension_count())
        .map(|h| compute_diversity_preference(graph, profiles, user, h, scope))
        .collect()
}

/// Unit-norm direction of a preference vector.
pub fn normalize_preference(pref: &DiversityPreference) -> Result<Vec<f64>> {
    let norm = pref.norm();
    if norm == 0.0 {
        return Err(Error::ZeroNormPreference);
    }
    Ok(pref.counts.iter().map(|&c| c as f64 / norm).collect())
}

/// A user's ranked candidate friends with their linkage likelihoods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user: UserId,
    candidates: Vec<UserId>,
    likelihoods: Vec<f64>,
}

impl CandidateSet {
    /// Builds a candidate set, rejecting self-candidates, duplicates and
    /// likelihoods outside `[0, 1]`.
    pub fn new(user: UserId, entries: Vec<(UserId, f64)>) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidCandidates {
            user: user.to_string(),
            reason,
        };
        let mut seen = BTreeSet::new();
        for (c, ll) in &entries {
            if *c == user {
                return Err(invalid("user is their own candidate".into()));
            }
            if !seen.insert(c) {
                return Err(invalid(format!("duplicate candidate `{c}`")));
            }
            if !ll.is_finite() || !(0.0..=1.0).contains(ll) {
                return Err(invalid(format!("likelihood {ll} for `{c}` is outside [0, 1]")));
            }
        }
        let (candidates, likelihoods) = entries.into_iter().unzip();
        Ok(CandidateSet {
            user,
            candidates,
            likelihoods,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[UserId] {
        &self.candidates
    }

    pub fn likelihoods(&self) -> &[f64] {
        &self.likelihoods
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UserId, f64)> {
        self.candidates.iter().zip(self.likelihoods.iter().copied())
    }

    /// Fails if a candidate is already a friend of the user in `graph`.
    pub fn check_against(&self, graph: &SocialGraph) -> Result<()> {
        if let Some(c) = self.candidates.iter().find(|c| graph.has_edge(&self.user, c)) {
            return Err(Error::InvalidCandidates {
                user: self.user.to_string(),
                reason: format!("`{c}` is already a friend"),
            });
        }
        Ok(())
    }

    /// Candidate positions by descending likelihood, ties by position.
    pub fn likelihood_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.likelihoods[b]
                .total_cmp(&self.likelihoods[a])
                .then(a.cmp(&b))
        });
        order
    }

    /// The `m` most likely candidates, kept in likelihood order.
    pub fn top(&self, m: usize) -> CandidateSet {
        let order = self.likelihood_order();
        let keep = &order[..m.min(order.len())];
        CandidateSet {
            user: self.user.clone(),
            candidates: keep.iter().map(|&i| self.candidates[i].clone()).collect(),
            likelihoods: keep.iter().map(|&i| self.likelihoods[i]).collect(),
        }
    }

    /// Min-max normalized likelihoods. A constant vector maps to all ones.
    pub fn normalized_likelihoods(&self) -> Vec<f64> {
        let lo = self.likelihoods.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self
            .likelihoods
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return vec![1.0; self.len()];
        }
        self.likelihoods.iter().map(|&l| (l - lo) / (hi - lo)).collect()
    }
}

/// Sparse 0/1 matrix of shape `Z_h x m` in compressed-column form: entry
/// `(z, q)` is present iff candidate `q` holds value `z` in the dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateProfileMatrix {
    pub dimension: usize,
    rows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
}

impl CandidateProfileMatrix {
    /// Builds from per-column row lists; each list must be sorted and unique.
    pub fn from_columns(dimension: usize, rows: usize, columns: &[&[u32]]) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in columns {
            if col.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(
                    "column rows must be strictly increasing".into(),
                ));
            }
            if let Some(&z) = col.last() {
                if z as usize >= rows {
                    return Err(Error::InvalidParameter(format!(
                        "row {z} out of range for {rows} rows"
                    )));
                }
            }
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        Ok(CandidateProfileMatrix {
            dimension,
            rows,
            col_ptr,
            row_idx,
        })
    }

    /// `(Z_h, m)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.col_ptr.len() - 1)
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn column(&self, q: usize) -> &[u32] {
        &self.row_idx[self.col_ptr[q]..self.col_ptr[q + 1]]
    }

    /// All `(z, q)` coordinates, column-major.
    pub fn entries(&self) -> impl Iterator<Item = (u32, usize)> + '_ {
        (0..self.shape().1).flat_map(move |q| self.column(q).iter().map(move |&z| (z, q)))
    }
}

/// Builds `C^{i,h}` with columns in candidate order. Candidates without a
/// profile row are treated as holding no values.
pub fn build_candidate_profile_matrix(
    candidates: &CandidateSet,
    profiles: &ProfileStore,
    dimension: usize,
) -> Result<CandidateProfileMatrix> {
    profiles.check_dimension(dimension)?;
    let columns: Vec<&[u32]> = candidates
        .candidates()
        .iter()
        .map(|c| profiles.values(c, dimension))
        .collect();
    CandidateProfileMatrix::from_columns(dimension, profiles.value_count(dimension), &columns)
}

/// Matrices for every dimension of the store.
pub fn build_all_matrices(
    candidates: &CandidateSet,
    profiles: &ProfileStore,
) -> Result<Vec<CandidateProfileMatrix>> {
    (0..profiles.dimension_count())
        .map(|h| build_candidate_profile_matrix(candidates, profiles, h))
        .collect()
}

/// `r^{i,h} = C^{i,h} y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityDistribution {
    pub dimension: usize,
    pub vector: Vec<f64>,
}

pub fn diversity_distribution(
    matrix: &CandidateProfileMatrix,
    decision: &[f64],
) -> Result<DiversityDistribution> {
    let (rows, m) = matrix.shape();
    if decision.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            actual: decision.len(),
        });
    }
    let mut vector = vec![0.0; rows];
    for (q, &yq) in decision.iter().enumerate() {
        if yq == 0.0 {
            continue;
        }
        for &z in matrix.column(q) {
            vector[z as usize] += yq;
        }
    }
    Ok(DiversityDistribution {
        dimension: matrix.dimension,
        vector,
    })
}
