//! Seeded synthetic bundles with planted diversity-preference structure.
//!
//! Every user draws a latent taste distribution per dimension and makes
//! friends preferentially with users whose profiles score well under it, so
//! measured preferences are informative. Candidates are two-hop non-friends
//! ranked by a noisy shared-neighbor likelihood, and test-period links are
//! accepted with probability `logistic(a * match + b * likelihood + c)`,
//! where `match` is the mean cosine between the user's measured preference
//! and the candidate's profile.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    compute_all_preferences, CandidateSet, DiversityPreference, FriendScope, ProfileStore,
    SocialGraph, UserId,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValuesPerUser {
    pub mean: f64,
    pub max: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceModel {
    pub preference_weight: f64,
    pub likelihood_weight: f64,
    pub intercept: f64,
}

impl AcceptanceModel {
    pub fn probability(&self, preference_match: f64, likelihood: f64) -> f64 {
        let z = self.preference_weight * preference_match
            + self.likelihood_weight * likelihood
            + self.intercept;
        1.0 / (1.0 + (-z).exp())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_users: usize,
    /// `Z_h` per dimension.
    pub dimension_sizes: Vec<usize>,
    pub values_per_user: ValuesPerUser,
    /// Zipf exponent of value popularity; 0 draws values uniformly.
    pub value_popularity_skew: f64,
    /// Larger is more peaked; tastes are Dirichlet with parameters
    /// `Z_h * popularity / concentration`.
    pub preference_concentration: f64,
    pub friends_per_user: usize,
    /// Probability that a friendship draw follows the user's taste.
    pub homophily: f64,
    /// Random users scored per taste-guided draw; the friend is drawn from
    /// them in proportion to taste score.
    pub homophily_pool: usize,
    pub m: usize,
    pub k: usize,
    pub acceptance: AcceptanceModel,
    pub likelihood_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            n_users: 400,
            dimension_sizes: vec![60, 80, 70, 90],
            values_per_user: ValuesPerUser { mean: 1.3, max: 3 },
            value_popularity_skew: 0.5,
            preference_concentration: 2.0,
            friends_per_user: 10,
            homophily: 0.8,
            homophily_pool: 30,
            m: 30,
            k: 5,
            acceptance: AcceptanceModel {
                preference_weight: 10.0,
                likelihood_weight: 1.0,
                intercept: -4.5,
            },
            likelihood_noise: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleSpec(msg));
        if self.n_users < 2 || self.dimension_sizes.is_empty() || self.friends_per_user == 0 {
            return bad("n_users >= 2, at least one dimension and friends_per_user >= 1 required".into());
        }
        if self.dimension_sizes.contains(&0) {
            return bad("every dimension needs at least one value".into());
        }
        let vpu = self.values_per_user;
        if vpu.max == 0 || !(vpu.mean >= 1.0 && vpu.mean <= vpu.max as f64) {
            return bad(format!("values_per_user mean {} must lie in [1, max = {}]", vpu.mean, vpu.max));
        }
        if let Some(&z) = self.dimension_sizes.iter().find(|&&z| z < vpu.max) {
            return bad(format!("Z_h = {z} is smaller than values_per_user.max = {}", vpu.max));
        }
        if !(self.value_popularity_skew >= 0.0) {
            return bad("value_popularity_skew must be nonnegative".into());
        }
        if !(self.preference_concentration > 0.0) {
            return bad("preference_concentration must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.homophily) || self.homophily_pool == 0 {
            return bad("homophily must lie in [0, 1] with a nonempty pool".into());
        }
        if self.k == 0 || self.m <= self.k {
            return bad(format!("need 0 < k < m, got k = {}, m = {}", self.k, self.m));
        }
        if self.n_users < self.m + 2 {
            return bad(format!("{} users cannot supply {} candidates", self.n_users, self.m));
        }
        if !(self.likelihood_noise >= 0.0) {
            return bad("likelihood_noise must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthBundle {
    /// Snapshots for periods 0, 1 and 2; edges are nested.
    pub snapshots: [SocialGraph; 3],
    pub profiles: ProfileStore,
    /// Candidate sets built on snapshot 1.
    pub candidates: BTreeMap<UserId, CandidateSet>,
    /// Friends each user gained in period 2.
    pub truth: BTreeMap<UserId, BTreeSet<UserId>>,
}

impl SynthBundle {
    pub fn preferences(&self, user: &UserId) -> Result<Vec<DiversityPreference>> {
        compute_all_preferences(&self.snapshots[1], &self.profiles, user, FriendScope::All)
    }
}

fn user_name(i: usize) -> UserId {
    UserId::new(format!("u{i:05}"))
}

/// Dirichlet draw with parameters `alpha_v = z * base_v / concentration`.
fn sample_taste(rng: &mut ChaCha8Rng, base: &[f64], concentration: f64) -> Vec<f64> {
    let z = base.len() as f64;
    let mut w: Vec<f64> = base
        .iter()
        .map(|&b| Gamma::new(z * b / concentration, 1.0).expect("alpha > 0").sample(rng))
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        // Every draw underflowed: the limit is a point mass.
        let hot = index::sample_weighted(rng, base.len(), |v| base[v], 1)
            .map_or(0, |s| s.index(0));
        w = (0..base.len()).map(|i| if i == hot { 1.0 } else { 0.0 }).collect();
    }
    w
}

/// Cosine between a preference and a candidate's 0/1 value indicator.
fn indicator_cosine(pref: &DiversityPreference, held: &[u32]) -> f64 {
    let norm = pref.norm();
    if norm == 0.0 || held.is_empty() {
        return 0.0;
    }
    let dot: f64 = held.iter().map(|&z| pref.counts[z as usize] as f64).sum();
    dot / (norm * (held.len() as f64).sqrt())
}

/// Mean over dimensions of the preference/profile cosine.
pub fn preference_match(prefs: &[DiversityPreference], profiles: &ProfileStore, candidate: &UserId) -> f64 {
    if prefs.is_empty() {
        return 0.0;
    }
    prefs
        .iter()
        .map(|p| indicator_cosine(p, profiles.values(candidate, p.dimension)))
        .sum::<f64>()
        / prefs.len() as f64
}

pub fn generate(spec: &SynthSpec) -> Result<SynthBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_users;
    let h_count = spec.dimension_sizes.len();
    let users: Vec<UserId> = (0..n).map(user_name).collect();

    let mut profiles = ProfileStore::new((0..h_count).map(|h| format!("d{h}")));
    for (h, &z) in spec.dimension_sizes.iter().enumerate() {
        for v in 0..z {
            profiles.intern(h, &format!("d{h}v{v}"))?;
        }
    }
    let popularity: Vec<Vec<f64>> = spec
        .dimension_sizes
        .iter()
        .map(|&z| {
            let w: Vec<f64> = (0..z).map(|v| 1.0 / ((v + 1) as f64).powf(spec.value_popularity_skew)).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        })
        .collect();
    let vpu = spec.values_per_user;
    let extra = if vpu.max > 1 {
        Some(Binomial::new((vpu.max - 1) as u64, (vpu.mean - 1.0) / (vpu.max - 1) as f64).map_err(|e| Error::InfeasibleSpec(e.to_string()))?)
    } else {
        None
    };
    for u in &users {
        profiles.ensure_user(u);
        for (h, &z) in spec.dimension_sizes.iter().enumerate() {
            let count = 1 + extra.as_ref().map_or(0, |b| b.sample(&mut rng) as usize);
            let picks = index::sample_weighted(&mut rng, z, |v| popularity[h][v], count)
                .map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
            for v in picks {
                profiles.assign(u, h, v as u32)?;
            }
        }
    }

    let tastes: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            popularity
                .iter()
                .map(|base| sample_taste(&mut rng, base, spec.preference_concentration))
                .collect()
        })
        .collect();
    let taste_score = |i: usize, j: usize| -> f64 {
        (0..h_count)
            .map(|h| {
                let held = profiles.values(&users[j], h);
                if held.is_empty() {
                    0.0
                } else {
                    held.iter().map(|&z| tastes[i][h][z as usize]).sum::<f64>() / held.len() as f64
                }
            })
            .sum()
    };

    // Snapshot 1 friendships; 70% of them already existed in period 0.
    let mut g1 = SocialGraph::new("t1", 1);
    for u in &users {
        g1.add_user(u.clone());
    }
    for i in 0..n {
        for _ in 0..spec.friends_per_user {
            let j = if rng.random::<f64>() < spec.homophily {
                // Pool member drawn in proportion to its taste score.
                let pool: Vec<usize> = (0..spec.homophily_pool)
                    .map(|_| {
                        let j = rng.random_range(0..n - 1);
                        if j >= i {
                            j + 1
                        } else {
                            j
                        }
                    })
                    .collect();
                let scores: Vec<f64> = pool.iter().map(|&j| taste_score(i, j)).collect();
                match WeightedIndex::new(&scores) {
                    Ok(w) => pool[w.sample(&mut rng)],
                    Err(_) => pool[rng.random_range(0..pool.len())],
                }
            } else {
                let j = rng.random_range(0..n - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            };
            let since = if rng.random::<f64>() < 0.7 { 0 } else { 1 };
            g1.add_edge_since(&users[i], &users[j], since)?;
        }
    }
    let mut g0 = SocialGraph::new("t0", 0);
    for u in &users {
        g0.add_user(u.clone());
    }
    for (a, b, _) in g1.edges().filter(|e| e.2 == 0) {
        g0.add_edge_since(a, b, 0)?;
    }

    // Candidates: top-m potential friends by a noisy shared-neighbor score.
    let mut candidates = BTreeMap::new();
    for (i, u) in users.iter().enumerate() {
        let friends: BTreeSet<&UserId> = g1.neighbors(u).collect();
        let mut shared: BTreeMap<&UserId, u32> = BTreeMap::new();
        for f in &friends {
            for ff in g1.neighbors(f) {
                if ff != u && !friends.contains(ff) {
                    *shared.entry(ff).or_default() += 1;
                }
            }
        }
        let available = n - 1 - friends.len();
        if available < spec.m {
            return Err(Error::InfeasibleSpec(format!(
                "user {u} has only {available} potential friends for m = {}",
                spec.m
            )));
        }
        while shared.len() < spec.m {
            let j = rng.random_range(0..n);
            if j != i && !friends.contains(&users[j]) {
                shared.entry(&users[j]).or_insert(0);
            }
        }
        let mut scored: Vec<(UserId, f64)> = shared
            .into_iter()
            .map(|(c, s)| {
                let noise = spec.likelihood_noise * rng.random::<f64>();
                let ll = 1.0 - (-(f64::from(s) + noise) / 3.0).exp();
                (c.clone(), ll)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(spec.m);
        candidates.insert(u.clone(), CandidateSet::new(u.clone(), scored)?);
    }

    // Period-2 acceptances.
    let mut g2 = relabeled(&g1, "t2", 2)?;
    for u in &users {
        let prefs = compute_all_preferences(&g1, &profiles, u, FriendScope::All)?;
        for (c, ll) in candidates[u].iter() {
            let p = spec
                .acceptance
                .probability(preference_match(&prefs, &profiles, c), ll);
            if rng.random::<f64>() < p {
                g2.add_edge_since(u, c, 2)?;
            }
        }
    }
    let mut truth = BTreeMap::new();
    for u in &users {
        let added: BTreeSet<UserId> = g2
            .neighbors(u)
            .filter(|v| !g1.has_edge(u, v))
            .cloned()
            .collect();
        if !added.is_empty() {
            truth.insert(u.clone(), added);
        }
    }

    Ok(SynthBundle {
        snapshots: [g0, g1, g2],
        profiles: compact_vocabulary(&profiles),
        candidates,
        truth,
    })
}

/// Copy of `profiles` whose vocabularies keep only held values, in their
/// original order, so that the store survives a write/ingest round trip.
fn compact_vocabulary(profiles: &ProfileStore) -> ProfileStore {
    let mut out = ProfileStore::new(profiles.dimension_names().iter().cloned());
    for u in profiles.users() {
        out.ensure_user(u);
    }
    for h in 0..profiles.dimension_count() {
        let mut holders: Vec<Vec<&UserId>> = vec![Vec::new(); profiles.value_count(h)];
        for u in profiles.users() {
            for &z in profiles.values(u, h) {
                holders[z as usize].push(u);
            }
        }
        for (z, users) in holders.iter().enumerate() {
            if users.is_empty() {
                continue;
            }
            let name = profiles.value_name(h, z as u32).expect("interned");
            let new = out.intern(h, name).expect("dimension exists");
            for u in users {
                out.assign(u, h, new).expect("interned");
            }
        }
    }
    out
}

fn relabeled(graph: &SocialGraph, label: &str, period: u32) -> Result<SocialGraph> {
    let mut out = SocialGraph::new(label, period);
    for u in graph.users() {
        out.add_user(u.clone());
    }
    for (a, b, since) in graph.edges() {
        out.add_edge_since(a, b, since)?;
    }
    Ok(out)
}
