use std::collections::BTreeSet;
use std::path::PathBuf;

use dpa_core::io::{ingest, InputPaths};
use dpa_core::metrics::dpms;
use dpa_core::model::{
    build_all_matrices, compute_all_preferences, diversity_distribution, normalize_preference, FriendScope, UserId,
};
use dpa_core::pipeline::{run_recommend, MethodName, RunManifest};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/karen")
}

fn karen_bundle() -> dpa_core::io::Bundle {
    let dir = fixture_dir();
    let paths = InputPaths {
        edges: dir.join("edges.tsv"),
        previous_edges: None,
        profiles: dir.join("profiles.tsv"),
        candidates: dir.join("candidates.tsv"),
        truth: Some(dir.join("truth.tsv")),
    };
    ingest(&paths).unwrap().0
}

#[test]
fn preference_counts_major() {
    let b = karen_bundle();
    let karen = UserId::from("karen");
    let major = b.profiles.dimension_index("major").unwrap();
    let prefs = compute_all_preferences(&b.graph, &b.profiles, &karen, FriendScope::All).unwrap();
    let d = &prefs[major].counts;
    assert_eq!(d.len(), 90);
    let at = |name: &str| d[b.profiles.value_index(major, name).unwrap() as usize];
    assert_eq!((at("IS"), at("CS"), at("Math")), (24, 6, 3));
    assert_eq!(d.iter().sum::<u64>(), 33);
}

#[test]
fn candidate_matrix_entries() {
    let b = karen_bundle();
    let karen = UserId::from("karen");
    let set = &b.candidates[&karen];
    let names: Vec<&str> = set.candidates().iter().map(|u| u.as_str()).collect();
    assert_eq!(names, ["u1", "u2", "u3", "u4", "u5", "u6"]);
    let major = b.profiles.dimension_index("major").unwrap();
    let matrices = build_all_matrices(set, &b.profiles).unwrap();
    let c = &matrices[major];
    assert_eq!(c.shape(), (90, 6));
    let got: BTreeSet<(String, usize)> = c
        .entries()
        .map(|(z, q)| (b.profiles.value_name(major, z).unwrap().to_string(), q + 1))
        .collect();
    let want: BTreeSet<(String, usize)> = [
        ("IS", 1),
        ("CS", 2),
        ("Math", 3),
        ("IS", 4),
        ("IS", 5),
        ("Finance", 5),
        ("CS", 6),
        ("Math", 6),
    ]
    .into_iter()
    .map(|(v, q)| (v.to_string(), q))
    .collect();
    assert_eq!(got, want);
}

#[test]
fn diversity_distribution_of_selection() {
    let b = karen_bundle();
    let set = &b.candidates[&UserId::from("karen")];
    let major = b.profiles.dimension_index("major").unwrap();
    let matrices = build_all_matrices(set, &b.profiles).unwrap();
    let r = diversity_distribution(&matrices[major], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let at = |name: &str| r.vector[b.profiles.value_index(major, name).unwrap() as usize];
    assert_eq!((at("IS"), at("CS"), at("Math"), at("Finance")), (3.0, 1.0, 1.0, 1.0));
    assert_eq!(r.vector.iter().sum::<f64>(), 6.0);
}

#[test]
fn normalized_preference_entry() {
    let b = karen_bundle();
    let karen = UserId::from("karen");
    let major = b.profiles.dimension_index("major").unwrap();
    let prefs = compute_all_preferences(&b.graph, &b.profiles, &karen, FriendScope::All).unwrap();
    let unit = normalize_preference(&prefs[major]).unwrap();
    let is = b.profiles.value_index(major, "IS").unwrap() as usize;
    assert!((unit[is] - 24.0 / 621f64.sqrt()).abs() < 1e-15);
    assert!((unit.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn dpms_of_example_selection() {
    let b = karen_bundle();
    let karen = UserId::from("karen");
    let set = &b.candidates[&karen];
    let prefs = compute_all_preferences(&b.graph, &b.profiles, &karen, FriendScope::All).unwrap();
    let matrices = build_all_matrices(set, &b.profiles).unwrap();
    let score = dpms(&prefs, &matrices, &[0, 3, 4, 5]).unwrap().unwrap();
    let want = 81.0 / (621f64.sqrt() * 12f64.sqrt());
    assert!((score - want).abs() < 1e-12, "{score} vs {want}");
    assert!((score - 0.9383).abs() < 1e-4);
}

#[test]
fn manifest_run_on_fixture() {
    let manifest = RunManifest::load(&fixture_dir().join("manifest.toml")).unwrap();
    let (bundle, _) = ingest(&manifest.inputs).unwrap();
    let out = run_recommend(&manifest, &bundle).unwrap();
    assert!(out.errors.is_empty(), "{:?}", out.errors);
    let ll = out.records.iter().find(|r| r.method == MethodName::Likelihood).unwrap();
    let ids: Vec<&str> = ll.selected.iter().map(|u| u.as_str()).collect();
    assert_eq!(ids, ["u1", "u2", "u3", "u4"]);
    let dpa = out.records.iter().find(|r| r.method == MethodName::DpaLr).unwrap();
    assert_eq!(dpa.selected.len(), 4);
    assert!(dpa.scores.dpms.unwrap() >= ll.scores.dpms.unwrap() - 1e-12);
}
