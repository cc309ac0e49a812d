#![allow(dead_code)]

use dpa_core::model::{build_all_matrices, CandidateProfileMatrix, CandidateSet, DiversityPreference, ProfileStore, UserId};
use dpa_core::MatchingProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random per-user instance kept in dense form for independent checks.
pub struct Instance {
    pub counts: Vec<Vec<u64>>,
    /// `holds[h][q]` lists the values candidate `q` holds in dimension `h`.
    pub holds: Vec<Vec<Vec<u32>>>,
    pub likelihoods: Vec<f64>,
    pub profiles: ProfileStore,
    pub candidates: CandidateSet,
}

impl Instance {
    pub fn m(&self) -> usize {
        self.likelihoods.len()
    }

    pub fn prefs(&self) -> Vec<DiversityPreference> {
        self.counts
            .iter()
            .enumerate()
            .map(|(h, c)| DiversityPreference {
                user: UserId::from("me"),
                dimension: h,
                counts: c.clone(),
            })
            .collect()
    }

    pub fn matrices(&self) -> Vec<CandidateProfileMatrix> {
        build_all_matrices(&self.candidates, &self.profiles).unwrap()
    }

    pub fn problem(&self) -> MatchingProblem {
        MatchingProblem::new(&self.prefs(), &self.matrices()).unwrap()
    }

    /// Number of dimensions with a nonzero preference.
    pub fn h_eff(&self) -> usize {
        self.counts.iter().filter(|c| c.iter().any(|&x| x > 0)).count()
    }

    /// Sum of cosines straight from the dense description.
    pub fn dense_objective(&self, y: &[f64]) -> f64 {
        let mut total = 0.0;
        for (h, d) in self.counts.iter().enumerate() {
            let dn = d.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
            if dn == 0.0 {
                continue;
            }
            let mut r = vec![0.0; d.len()];
            for (q, vals) in self.holds[h].iter().enumerate() {
                for &z in vals {
                    r[z as usize] += y[q];
                }
            }
            let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if rn == 0.0 {
                continue;
            }
            let dot: f64 = d.iter().zip(&r).map(|(&a, b)| a as f64 * b).sum();
            total += dot / (dn * rn);
        }
        total
    }

    pub fn indicator(&self, sel: &[usize]) -> Vec<f64> {
        let mut y = vec![0.0; self.m()];
        for &q in sel {
            y[q] = 1.0;
        }
        y
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance with `m` candidates and one dimension per entry of
/// `sizes`. Each candidate holds up to `max_values` values per dimension
/// (possibly none); preferences are random counts with at least one
#[allow(clippy::needless_range_loop)]
/// nonzero dimension.
pub fn random_instance(seed: u64, m: usize, sizes: &[usize], max_values: usize) -> Instance {
    let mut rng = rng(seed);
    let dims: Vec<String> = (0..sizes.len()).map(|h| format!("d{h}")).collect();
    let mut profiles = ProfileStore::new(dims.iter().cloned());
    for (h, &z) in sizes.iter().enumerate() {
        for v in 0..z {
            profiles.intern(h, &format!("v{v}")).unwrap();
        }
    }
    let mut holds = vec![vec![Vec::new(); m]; sizes.len()];
    for q in 0..m {
        let user = UserId::new(format!("c{q}"));
        profiles.ensure_user(&user);
        for (h, &z) in sizes.iter().enumerate() {
            let n = rng.random_range(0..=max_values.min(z));
            let mut vals: Vec<u32> = rand::seq::index::sample(&mut rng, z, n)
                .into_iter()
                .map(|v| v as u32)
                .collect();
            vals.sort_unstable();
            for &v in &vals {
                profiles.assign(&user, h, v).unwrap();
            }
            holds[h][q] = vals;
        }
    }
    let mut counts: Vec<Vec<u64>> = sizes
        .iter()
        .map(|&z| (0..z).map(|_| if rng.random_bool(0.5) { rng.random_range(1..20) } else { 0 }).collect())
        .collect();
    if counts.iter().all(|c| c.iter().all(|&x| x == 0)) {
        counts[0][0] = 1;
    }
    let likelihoods: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
    let candidates = CandidateSet::new(
        UserId::from("me"),
        likelihoods
            .iter()
            .enumerate()
            .map(|(q, &l)| (UserId::new(format!("c{q}")), l))
            .collect(),
    )
    .unwrap();
    Instance {
        counts,
        holds,
        likelihoods,
        profiles,
        candidates,
    }
}

/// All `k`-subsets of `0..m` in lexicographic order.
pub fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for q in start..m {
            cur.push(q);
            rec(q + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::new(), &mut out);
    out
}

/// Top-`k` indices by likelihood, ties to the earlier index.
pub fn top_k_reference(ll: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ll.len()).collect();
    idx.sort_by(|&a, &b| ll[b].partial_cmp(&ll[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
