//! Tab-separated input files and their writers.
//!
//! | file       | line format                       |
//! |------------|-----------------------------------|
//! | edges      | `user_a \t user_b`                |
//! | profiles   | `user \t dimension \t value`      |
//! | candidates | `user \t candidate \t likelihood` |
//! | truth      | `user \t added_friend`            |
//!
//! Blank lines and lines starting with `#` are skipped. Candidate order in
//! the file is the candidate order of the set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CandidateSet, ProfileStore, SocialGraph, UserId};
use crate::synth::SynthBundle;

pub type Truth = BTreeMap<UserId, BTreeSet<UserId>>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPaths {
    pub edges: PathBuf,
    /// An earlier snapshot; its edges are dated one period before the
    /// others, which the recent-friends scope uses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_edges: Option<PathBuf>,
    pub profiles: PathBuf,
    pub candidates: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub graph: SocialGraph,
    pub profiles: ProfileStore,
    pub candidates: BTreeMap<UserId, CandidateSet>,
    pub truth: Option<Truth>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub name: String,
    /// Distinct values `Z_h`.
    pub values: usize,
    /// Most values held by one user.
    pub max_per_user: usize,
    /// Mean values per user among users holding any.
    pub avg_per_user: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub users: usize,
    pub edges: usize,
    pub duplicate_edges: usize,
    pub profile_users: usize,
    pub dimensions: Vec<DimensionStats>,
    pub candidate_users: usize,
    pub candidate_rows: usize,
    pub truth_users: usize,
    pub truth_rows: usize,
}

impl IngestReport {
    pub fn log(&self) {
        info!(
            "{} users, {} edges ({} duplicates dropped), {} users with profiles",
            self.users, self.edges, self.duplicate_edges, self.profile_users
        );
        for d in &self.dimensions {
            info!(
                "dimension {}: {} values, max {} per user, avg {:.2}",
                d.name, d.values, d.max_per_user, d.avg_per_user
            );
        }
        info!(
            "{} users with {} candidates, {} users with {} test-period additions",
            self.candidate_users, self.candidate_rows, self.truth_users, self.truth_rows
        );
    }
}

struct Lines {
    path: PathBuf,
    reader: BufReader<File>,
    line: usize,
    buf: String,
}

impl Lines {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        Ok(Lines {
            path: path.to_path_buf(),
            reader: BufReader::new(file),
            line: 0,
            buf: String::new(),
        })
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.line,
            message: message.into(),
        }
    }

    /// Next data row split into exactly `n` nonempty tab-separated fields.
    fn next_row(&mut self, n: usize) -> Result<Option<Vec<String>>> {
        loop {
            self.buf.clear();
            if self.reader.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line += 1;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() || text.starts_with('#') {
                continue;
            }
            let fields: Vec<String> = text.split('\t').map(str::to_owned).collect();
            if fields.len() != n {
                return Err(self.error(format!("expected {n} tab-separated fields, found {}", fields.len())));
            }
            if let Some(i) = fields.iter().position(|f| f.trim().is_empty()) {
                return Err(self.error(format!("field {} is empty", i + 1)));
            }
            return Ok(Some(fields));
        }
    }
}

fn read_edges(path: &Path, graph: &mut SocialGraph, since: u32) -> Result<(usize, usize)> {
    let mut lines = Lines::open(path)?;
    let (mut added, mut duplicates) = (0, 0);
    while let Some(f) = lines.next_row(2)? {
        let (a, b) = (UserId::new(&f[0]), UserId::new(&f[1]));
        if a == b {
            return Err(lines.error(format!("self-loop on `{a}`")));
        }
        if graph.add_edge_since(&a, &b, since)? {
            added += 1;
        } else {
            duplicates += 1;
        }
    }
    Ok((added, duplicates))
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "graph".to_owned(), |s| s.to_string_lossy().into_owned())
}

/// Edge file as a graph. Edges of `previous` are dated period 0 and the
/// remaining ones period 1; without `previous` everything is period 0.
pub fn read_graph(path: &Path, previous: Option<&Path>) -> Result<(SocialGraph, usize)> {
    let period = u32::from(previous.is_some());
    let mut graph = SocialGraph::new(label_of(path), period);
    if let Some(prev) = previous {
        let mut earlier = SocialGraph::new(label_of(prev), 0);
        read_edges(prev, &mut earlier, 0)?;
        let (_, duplicates) = read_edges(path, &mut graph, period)?;
        let mut missing = 0;
        let mut dated = SocialGraph::new(graph.label().to_owned(), period);
        for u in graph.users() {
            dated.add_user(u.clone());
        }
        for (a, b, _) in graph.edges() {
            let since = if earlier.has_edge(a, b) { 0 } else { period };
            dated.add_edge_since(a, b, since)?;
        }
        for (a, b, _) in earlier.edges() {
            if !dated.has_edge(a, b) {
                missing += 1;
            }
        }
        if missing > 0 {
            warn!(
                "{}: {missing} edges of {} are absent from it",
                path.display(),
                prev.display()
            );
        }
        return Ok((dated, duplicates));
    }
    let (_, duplicates) = read_edges(path, &mut graph, period)?;
    Ok((graph, duplicates))
}

/// Profile rows in file order; later repeats of a row are ignored.
pub fn read_profiles(path: &Path) -> Result<ProfileStore> {
    let mut lines = Lines::open(path)?;
    let mut store = ProfileStore::default();
    while let Some(f) = lines.next_row(3)? {
        store.assign_value(&UserId::new(&f[0]), &f[1], &f[2]);
    }
    Ok(store)
}

pub fn read_candidates(path: &Path) -> Result<BTreeMap<UserId, CandidateSet>> {
    let mut lines = Lines::open(path)?;
    let mut rows: BTreeMap<UserId, (usize, Vec<(UserId, f64)>)> = BTreeMap::new();
    while let Some(f) = lines.next_row(3)? {
        let ll: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| lines.error(format!("likelihood `{}` is not a number", f[2])))?;
        if !(0.0..=1.0).contains(&ll) {
            return Err(lines.error(format!("likelihood {ll} outside [0, 1]")));
        }
        let line = lines.line;
        let entry = rows.entry(UserId::new(&f[0])).or_insert((line, Vec::new()));
        entry.1.push((UserId::new(&f[1]), ll));
    }
    rows.into_iter()
        .map(|(user, (line, entries))| {
            let set = CandidateSet::new(user.clone(), entries).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
            Ok((user, set))
        })
        .collect()
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    let mut lines = Lines::open(path)?;
    let mut truth = Truth::new();
    while let Some(f) = lines.next_row(2)? {
        truth
            .entry(UserId::new(&f[0]))
            .or_default()
            .insert(UserId::new(&f[1]));
    }
    Ok(truth)
}

fn dimension_stats(profiles: &ProfileStore) -> Vec<DimensionStats> {
    (0..profiles.dimension_count())
        .map(|h| {
            let held: Vec<usize> = profiles
                .users()
                .map(|u| profiles.values(u, h).len())
                .filter(|&n| n > 0)
                .collect();
            DimensionStats {
                name: profiles.dimension_names()[h].clone(),
                values: profiles.value_count(h),
                max_per_user: held.iter().copied().max().unwrap_or(0),
                avg_per_user: if held.is_empty() {
                    0.0
                } else {
                    held.iter().sum::<usize>() as f64 / held.len() as f64
                },
            }
        })
        .collect()
}

fn check_known<'a>(path: &Path, universe: &SocialGraph, ids: impl Iterator<Item = &'a UserId>) -> Result<()> {
    let unknown: BTreeSet<String> = ids
        .filter(|u| !universe.contains_user(u))
        .map(|u| u.to_string())
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::DanglingIds {
            path: path.to_path_buf(),
            ids: unknown.into_iter().collect(),
        })
    }
}

/// Reads and cross-checks a bundle. The user universe is every id in the
/// edge or profile file; candidate and truth ids must belong to it and no
/// candidate may already be a friend.
pub fn ingest(paths: &InputPaths) -> Result<(Bundle, IngestReport)> {
    let (mut graph, duplicate_edges) = read_graph(&paths.edges, paths.previous_edges.as_deref())?;
    if duplicate_edges > 0 {
        warn!("{}: dropped {duplicate_edges} duplicate edges", paths.edges.display());
    }
    let profiles = read_profiles(&paths.profiles)?;
    for u in profiles.users() {
        graph.add_user(u.clone());
    }
    let candidates = read_candidates(&paths.candidates)?;
    check_known(
        &paths.candidates,
        &graph,
        candidates
            .values()
            .flat_map(|s| std::iter::once(&s.user).chain(s.candidates())),
    )?;
    for set in candidates.values() {
        set.check_against(&graph)?;
    }
    let truth = match &paths.truth {
        Some(p) => {
            let t = read_truth(p)?;
            check_known(p, &graph, t.iter().flat_map(|(u, vs)| std::iter::once(u).chain(vs)))?;
            Some(t)
        }
        None => None,
    };
    let report = IngestReport {
        users: graph.user_count(),
        edges: graph.edge_count(),
        duplicate_edges,
        profile_users: profiles.users().count(),
        dimensions: dimension_stats(&profiles),
        candidate_users: candidates.len(),
        candidate_rows: candidates.values().map(CandidateSet::len).sum(),
        truth_users: truth.as_ref().map_or(0, BTreeMap::len),
        truth_rows: truth.as_ref().map_or(0, |t| t.values().map(BTreeSet::len).sum()),
    };
    Ok((
        Bundle {
            graph,
            profiles,
            candidates,
            truth,
        },
        report,
    ))
}

/// `(user, candidate)` pairs whose candidate is not exactly two hops away.
pub fn two_hop_violations(graph: &SocialGraph, candidates: &BTreeMap<UserId, CandidateSet>) -> Vec<(UserId, UserId)> {
    let mut out = Vec::new();
    for (u, set) in candidates {
        let reach: BTreeSet<&UserId> = graph.neighbors(u).flat_map(|f| graph.neighbors(f)).collect();
        for c in set.candidates() {
            if !reach.contains(c) || graph.has_edge(u, c) {
                out.push((u.clone(), c.clone()));
            }
        }
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_edges(path: &Path, graph: &SocialGraph) -> Result<()> {
    let mut w = create(path)?;
    for (a, b, _) in graph.edges() {
        writeln!(w, "{a}\t{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// Rows ordered by dimension, value index and user, so reading the file
/// back interns every vocabulary in the same order.
pub fn write_profiles(path: &Path, profiles: &ProfileStore) -> Result<()> {
    let mut w = create(path)?;
    for h in 0..profiles.dimension_count() {
        let mut rows: Vec<(u32, &UserId)> = profiles
            .users()
            .flat_map(|u| profiles.values(u, h).iter().map(move |&z| (z, u)))
            .collect();
        rows.sort();
        let name = &profiles.dimension_names()[h];
        for (z, u) in rows {
            let value = profiles.value_name(h, z).expect("interned");
            writeln!(w, "{u}\t{name}\t{value}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_candidates(path: &Path, candidates: &BTreeMap<UserId, CandidateSet>) -> Result<()> {
    let mut w = create(path)?;
    for (u, set) in candidates {
        for (c, ll) in set.iter() {
            writeln!(w, "{u}\t{c}\t{ll}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth(path: &Path, truth: &Truth) -> Result<()> {
    let mut w = create(path)?;
    for (u, added) in truth {
        for v in added {
            writeln!(w, "{u}\t{v}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// File names used by [`write_synth_bundle`].
pub const SNAPSHOT_FILES: [&str; 3] = ["edges_t0.tsv", "edges_t1.tsv", "edges_t2.tsv"];
pub const PROFILES_FILE: &str = "profiles.tsv";
pub const CANDIDATES_FILE: &str = "candidates.tsv";
pub const TRUTH_FILE: &str = "truth.tsv";

/// Writes all snapshots, profiles, candidates and truth into `dir` and
/// returns the paths that reload the period-1 view.
pub fn write_synth_bundle(dir: &Path, bundle: &SynthBundle) -> Result<InputPaths> {
    fs::create_dir_all(dir)?;
    for (graph, name) in bundle.snapshots.iter().zip(SNAPSHOT_FILES) {
        write_edges(&dir.join(name), graph)?;
    }
    write_profiles(&dir.join(PROFILES_FILE), &bundle.profiles)?;
    write_candidates(&dir.join(CANDIDATES_FILE), &bundle.candidates)?;
    write_truth(&dir.join(TRUTH_FILE), &bundle.truth)?;
    Ok(InputPaths {
        edges: dir.join(SNAPSHOT_FILES[1]),
        previous_edges: Some(dir.join(SNAPSHOT_FILES[0])),
        profiles: dir.join(PROFILES_FILE),
        candidates: dir.join(CANDIDATES_FILE),
        truth: Some(dir.join(TRUTH_FILE)),
    })
}
