use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use dpa_core::io::{self, InputPaths};
use dpa_core::pipeline::{self, EvaluationSpec, MethodName, RecommendationRecord, ReferenceSpec, RunManifest, TruthPolicy};
use dpa_core::synth::{self, SynthSpec};

/// Diversity-preference-aware link recommendation.
#[derive(Parser)]
#[command(name = "dpalr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate input files and print their summary statistics.
    IngestCheck(IngestArgs),
    /// Generate a synthetic bundle and a starter manifest.
    Synth(SynthArgs),
    /// Produce recommendations for every method in the manifest.
    Recommend(RunArgs),
    /// Score recommendations against test-period additions.
    Evaluate(EvaluateArgs),
    /// Compare the solver with exhaustive search on small candidate sets.
    OracleGap(RunArgs),
    /// Recommend and evaluate over the whole manifest grid.
    Sweep(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Take the input paths from a manifest.
    #[arg(long, conflicts_with_all = ["edges", "profiles", "candidates"])]
    manifest: Option<PathBuf>,
    #[arg(long, requires_all = ["profiles", "candidates"])]
    edges: Option<PathBuf>,
    #[arg(long)]
    previous_edges: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also report candidates that are not two hops from their user.
    #[arg(long)]
    two_hop: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generator settings; defaults are used for anything missing.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    users: Option<usize>,
    /// Candidates per user.
    #[arg(long)]
    candidates: Option<usize>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_users: Option<usize>,
    /// Exit with status 0 even if some users failed.
    #[arg(long)]
    allow_errors: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Exclude,
    CountAsZero,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Read the recommendation, truth and output locations from a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    recommendations: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Reference method for improvements and paired tests, e.g. `DPA-LR`.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, value_enum)]
    truth_policy: Option<PolicyArg>,
}

fn load_manifest(path: &Path, o: &Overrides) -> Result<RunManifest> {
    let mut m = RunManifest::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(d) = &o.output_dir {
        m.output_dir = d.clone();
    }
    if let Some(p) = o.parallelism {
        m.parallelism = p;
    }
    if let Some(s) = o.seed {
        m.seed = s;
    }
    if o.max_users.is_some() {
        m.max_users = o.max_users;
    }
    m.validate()?;
    Ok(m)
}

fn ingest(paths: &InputPaths) -> Result<io::Bundle> {
    let (bundle, report) = io::ingest(paths)?;
    report.log();
    Ok(bundle)
}

/// Exit status for a run that recorded `errors` per-user failures.
fn finish(errors: usize, allow: bool) -> ExitCode {
    if errors == 0 {
        ExitCode::SUCCESS
    } else if allow {
        warn!("{errors} per-user errors");
        ExitCode::SUCCESS
    } else {
        eprintln!("{errors} per-user errors; see the errors file");
        ExitCode::from(2)
    }
}

fn ingest_check(args: &IngestArgs) -> Result<ExitCode> {
    let paths = match (&args.manifest, &args.edges) {
        (Some(m), _) => RunManifest::load(m)?.inputs,
        (None, Some(edges)) => InputPaths {
            edges: edges.clone(),
            previous_edges: args.previous_edges.clone(),
            profiles: args.profiles.clone().expect("required by clap"),
            candidates: args.candidates.clone().expect("required by clap"),
            truth: args.truth.clone(),
        },
        (None, None) => bail!("give --manifest or --edges/--profiles/--candidates"),
    };
    let (bundle, report) = io::ingest(&paths)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if args.two_hop {
        let bad = io::two_hop_violations(&bundle.graph, &bundle.candidates);
        for (u, c) in &bad {
            println!("not two hops: {u}\t{c}");
        }
        if !bad.is_empty() {
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn synth_cmd(args: &SynthArgs) -> Result<ExitCode> {
    let mut spec = match &args.spec {
        Some(p) => toml::from_str::<SynthSpec>(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.users {
        spec.n_users = n;
    }
    if let Some(m) = args.candidates {
        spec.m = m;
    }
    let bundle = synth::generate(&spec)?;
    io::write_synth_bundle(&args.out, &bundle)?;
    fs::write(args.out.join("synth.toml"), toml::to_string(&spec)?)?;
    let manifest = starter_manifest(&spec);
    fs::write(args.out.join("manifest.toml"), manifest.to_toml()?)?;
    info!(
        "wrote {} users, {} edges, {} test-period additions to {}",
        spec.n_users,
        bundle.snapshots[1].edge_count(),
        bundle.truth.values().map(|s| s.len()).sum::<usize>(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn starter_manifest(spec: &SynthSpec) -> RunManifest {
    let text = format!(
        r#"
output_dir = "results"
seed = {seed}
parallelism = 4

[inputs]
edges = "{t1}"
previous_edges = "{t0}"
profiles = "{p}"
candidates = "{c}"
truth = "{t}"

[grid]
k = [{k}]

[[methods]]
name = "DPA-LR"

[[methods]]
name = "LL"

[[methods]]
name = "MMR"
theta = [0.5]

[[methods]]
name = "MSD"
theta = [0.5]

[[methods]]
name = "DPP"
theta = [0.5]

[[methods]]
name = "DiRec"
"#,
        seed = spec.seed,
        t1 = io::SNAPSHOT_FILES[1],
        t0 = io::SNAPSHOT_FILES[0],
        p = io::PROFILES_FILE,
        c = io::CANDIDATES_FILE,
        t = io::TRUTH_FILE,
        k = spec.k,
    );
    RunManifest::from_toml(&text).expect("starter manifest parses")
}

fn recommend(manifest: &RunManifest) -> Result<pipeline::RecommendOutput> {
    let bundle = ingest(&manifest.inputs)?;
    let out = pipeline::run_recommend(manifest, &bundle)?;
    pipeline::write_recommend_output(&manifest.output_dir, &out, manifest.write_traces)?;
    info!(
        "{} recommendations, {} errors in {}",
        out.records.len(),
        out.errors.len(),
        manifest.output_dir.display()
    );
    Ok(out)
}

fn evaluate_and_write(records: &[RecommendationRecord], truth_path: &Path, spec: &EvaluationSpec, dir: &Path) -> Result<()> {
    let truth = io::read_truth(truth_path)?;
    let report = pipeline::run_evaluate(records, &truth, spec)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("evaluation.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let text = pipeline::format_evaluation(&report);
    fs::write(dir.join("evaluation.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn parse_reference(name: &str) -> Result<ReferenceSpec> {
    let method: MethodName = serde_json::from_value(serde_json::Value::String(name.to_owned()))
        .with_context(|| format!("unknown method `{name}`"))?;
    Ok(ReferenceSpec {
        method,
        theta: None,
        sigma: None,
    })
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<ExitCode> {
    let manifest = args.manifest.as_deref().map(RunManifest::load).transpose()?;
    let mut spec = manifest.as_ref().map(|m| m.evaluation.clone()).unwrap_or_default();
    if let Some(r) = &args.reference {
        spec.reference = Some(parse_reference(r)?);
    }
    if let Some(p) = args.truth_policy {
        spec.truth_policy = match p {
            PolicyArg::Exclude => TruthPolicy::Exclude,
            PolicyArg::CountAsZero => TruthPolicy::CountAsZero,
        };
    }
    let out_dir = args
        .output_dir
        .clone()
        .or_else(|| manifest.as_ref().map(|m| m.output_dir.clone()))
        .context("give --output-dir or --manifest")?;
    let recs = args
        .recommendations
        .clone()
        .unwrap_or_else(|| out_dir.join(pipeline::RECOMMENDATIONS_FILE));
    let truth = args
        .truth
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.inputs.truth.clone()))
        .context("give --truth or a manifest with a truth file")?;
    let records: Vec<RecommendationRecord> = pipeline::read_jsonl(&recs)?;
    evaluate_and_write(&records, &truth, &spec, &out_dir)?;
    Ok(ExitCode::SUCCESS)
}

fn oracle_gap_cmd(args: &RunArgs) -> Result<ExitCode> {
    let manifest = load_manifest(&args.manifest, &args.overrides)?;
    let bundle = ingest(&manifest.inputs)?;
    let report = pipeline::run_oracle_gap(&manifest, &bundle)?;
    let dir = &manifest.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("oracle_gap.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let text = pipeline::format_oracle_gap(&report);
    fs::write(dir.join("oracle_gap.txt"), &text)?;
    print!("{text}");
    let skipped: usize = report.rows.iter().map(|r| r.skipped_users).sum();
    Ok(finish(skipped, args.overrides.allow_errors))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::IngestCheck(a) => ingest_check(&a),
        Command::Synth(a) => synth_cmd(&a),
        Command::Recommend(a) => {
            let manifest = load_manifest(&a.manifest, &a.overrides)?;
            let out = recommend(&manifest)?;
            Ok(finish(out.errors.len(), a.overrides.allow_errors))
        }
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::OracleGap(a) => oracle_gap_cmd(&a),
        Command::Sweep(a) => {
            let manifest = load_manifest(&a.manifest, &a.overrides)?;
            let truth = manifest
                .inputs
                .truth
                .clone()
                .context("sweep needs a truth file in the manifest")?;
            let out = recommend(&manifest)?;
            evaluate_and_write(&out.records, &truth, &manifest.evaluation, &manifest.output_dir)?;
            Ok(finish(out.errors.len(), a.overrides.allow_errors))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
