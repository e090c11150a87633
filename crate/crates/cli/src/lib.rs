//! Command-line pipeline driver.
//!
//! `analyze` turns IR + CFG + spec into an optimized enforcement plan,
//! `profile` collects a labeled dataset from a trace, `train` fits and
//! cross-validates the audition model, `replay` runs a trace against a plan
//! (exit status 3 when anything is denied), `scenario` emits fixture sets,
//! and `report` summarizes a verdict log.
//!
//! All randomness flows from explicit `--seed` flags and outputs are
//! written atomically, so identical invocations produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use o2c_core::analyzer::{build_plan, optimize_plan, reduction_report, EnforcementPlan};
use o2c_core::dtree::{
    cross_validate, flatten, load_model, quantize, train, CvReport, EvalBudget, FeatureVector,
    Granularity, TrainParams,
};
use o2c_core::enforce::{parse_verdicts, serialize_verdicts, Decision, Engine, Phase, ReplayConfig};
use o2c_core::model::{
    parse_ir, parse_trace, serialize_ir, serialize_trace, CompartmentSpec, ControlFlowGraph,
};
use o2c_core::profiler::{export_dataset, import_dataset, profile_trace, Dataset};
use o2c_core::scenario::{generate, generate_training_world, Scenario, ScenarioKind, ScenarioParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DENIED: i32 = 3;

#[derive(Parser)]
#[command(name = "o2c", about = "On-the-fly compartmentalization pipeline over IR and trace files")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build and optimize an enforcement plan from instruction IR.
    Analyze(AnalyzeArgs),
    /// Collect a labeled object-content dataset from a trace.
    Profile(ProfileArgs),
    /// Train the audition decision tree and report cross-validation scores.
    Train(TrainArgs),
    /// Replay a trace against a plan; exit 3 if anything is denied.
    Replay(ReplayArgs),
    /// Emit a scenario fixture set (IR, CFG, spec, trace, manifest).
    Scenario(ScenarioArgs),
    /// Summarize a verdict log.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub cfg: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Output plan path (`.o2cplan.json`).
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the reduction passes.
    #[arg(long)]
    pub no_optimize: bool,
}

#[derive(Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Feature-vector length in quad words.
    #[arg(long, default_value_t = 256)]
    pub feature_words: usize,
    /// Output dataset path (`.o2cdata.csv`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_granularity, default_value = "type")]
    pub granularity: Granularity,
    #[arg(long, default_value_t = 14)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output model path (`.o2cmodel.json`).
    #[arg(long)]
    pub out: PathBuf,
    /// Also cross-validate at each listed depth.
    #[arg(long, value_delimiter = ',')]
    pub depth_sweep: Vec<usize>,
    /// Write the machine-readable CV report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    /// Audition model; required for Phase 0 traces with untracked frees.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Starting phase: -1, 0, or 1.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    pub phase: String,
    /// Compartmentalization activation tick.
    #[arg(long, default_value_t = 100)]
    pub t0: u64,
    /// Force the Phase 0 -> 1 transition at this tick.
    #[arg(long)]
    pub transition_tick: Option<u64>,
    /// Evaluation budget depth cap.
    #[arg(long, default_value_t = 14)]
    pub max_depth: usize,
    /// Output verdict log (`.o2cverdicts.jsonl`).
    #[arg(long)]
    pub out: PathBuf,
    /// Write the machine-readable replay summary here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct ScenarioArgs {
    /// Scenario kind, or `training-world`.
    #[arg(long)]
    pub name: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Untracked (pre-time-0) object count for attack/benign scenarios.
    #[arg(long, default_value_t = 2)]
    pub untracked: usize,
    /// training-world: number of object types.
    #[arg(long, default_value_t = 20)]
    pub types: usize,
    /// training-world: rows per type.
    #[arg(long, default_value_t = 500)]
    pub rows: usize,
    /// training-world: content separability in [0, 1].
    #[arg(long, default_value_t = 0.9)]
    pub separability: f64,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

fn parse_granularity(s: &str) -> Result<Granularity, String> {
    match s {
        "type" => Ok(Granularity::Type),
        "compartment" => Ok(Granularity::Compartment),
        other => Err(format!("unknown granularity `{other}` (expected type|compartment)")),
    }
}

/// Atomic write: temp file in the target directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn read_spec(path: &Path) -> Result<CompartmentSpec> {
    let spec: CompartmentSpec = serde_json::from_str(
        &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
    )
    .with_context(|| format!("parsing {}", path.display()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Profile(args) => cmd_profile(args),
        Command::Train(args) => cmd_train(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Scenario(args) => cmd_scenario(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<i32> {
    let ir = parse_ir(BufReader::new(fs::File::open(&args.ir)?))?;
    let cfg: ControlFlowGraph = serde_json::from_str(&fs::read_to_string(&args.cfg)?)?;
    let spec = read_spec(&args.spec)?;

    let mut plan = build_plan(&ir, &cfg, &spec)?;
    if !args.no_optimize {
        plan = optimize_plan(plan, &ir, &spec);
    }
    for w in &plan.warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&args.out, plan.to_json().as_bytes())?;

    let stats = reduction_report(&plan);
    println!("plan: {} probes ({} before optimization)", stats.after_optimization, stats.total_candidates);
    for p in &stats.per_pass_removed {
        println!(
            "pass {:<20} removed {:>4} ({:.2}%){}",
            p.pass,
            p.removed,
            p.fraction * 100.0,
            if p.rewritten > 0 { format!(", rewrote {}", p.rewritten) } else { String::new() }
        );
    }
    Ok(EXIT_OK)
}

fn cmd_profile(args: ProfileArgs) -> Result<i32> {
    let raw = fs::read(&args.trace)?;
    let trace = parse_trace(&raw[..])?;
    let spec = read_spec(&args.spec)?;
    let mut ds = profile_trace(&trace, &spec, args.feature_words);
    ds.meta.source_hash = hex_digest(&raw);
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    let mut buf = Vec::new();
    export_dataset(&ds, &mut buf)?;
    write_atomic(&args.out, &buf)?;
    println!(
        "dataset: {} rows, {} classes, {} quad words (source sha256 {})",
        ds.rows.len(),
        ds.meta.class_histogram.len(),
        ds.meta.feature_words,
        &ds.meta.source_hash[..12]
    );
    Ok(EXIT_OK)
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

fn labeled(ds: &Dataset, granularity: Granularity) -> Vec<FeatureVector> {
    ds.rows
        .iter()
        .map(|r| FeatureVector {
            words: r.words.clone(),
            label: match granularity {
                Granularity::Type => r.type_id as i64,
                Granularity::Compartment => i64::from(r.in_compartment),
            },
        })
        .collect()
}

#[derive(Serialize)]
struct TrainReport {
    granularity: String,
    max_depth: usize,
    folds: usize,
    seed: u64,
    cv: CvReport,
    depth_sweep: BTreeMap<usize, CvReport>,
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let ds = import_dataset(BufReader::new(fs::File::open(&args.data)?))?;
    if ds.rows.is_empty() {
        bail!("dataset {} is empty", args.data.display());
    }
    let data = labeled(&ds, args.granularity);
    let params = TrainParams { max_depth: args.max_depth, ..Default::default() };

    let cv = cross_validate(&data, &params, args.folds, args.seed)?;
    for w in &cv.warnings {
        eprintln!("warning: {w}");
    }
    let gname = match args.granularity {
        Granularity::Type => "type",
        Granularity::Compartment => "compartment",
    };
    println!(
        "cv[{gname}] depth {}: accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4} ({} folds)",
        args.max_depth, cv.accuracy_mean, cv.accuracy_std, cv.macro_f1_mean, cv.macro_f1_std, args.folds
    );

    let mut sweep = BTreeMap::new();
    for depth in &args.depth_sweep {
        let p = TrainParams { max_depth: *depth, ..Default::default() };
        let r = cross_validate(&data, &p, args.folds, args.seed)?;
        println!(
            "cv[{gname}] depth {depth}: accuracy {:.4} ± {:.4}, macro-F1 {:.4} ± {:.4}",
            r.accuracy_mean, r.accuracy_std, r.macro_f1_mean, r.macro_f1_std
        );
        sweep.insert(*depth, r);
    }

    let tree = train(&data, &params)?;
    let flat = quantize(flatten(&tree, args.granularity));
    let budget = EvalBudget { max_depth: args.max_depth, ..Default::default() };
    flat.validate(&budget)?;
    write_atomic(&args.out, serde_json::to_string_pretty(&flat)?.as_bytes())?;
    println!("model: {} nodes, depth {} -> {}", flat.meta.n_nodes, flat.meta.max_depth, args.out.display());

    if let Some(report) = &args.report {
        let tr = TrainReport {
            granularity: gname.into(),
            max_depth: args.max_depth,
            folds: args.folds,
            seed: args.seed,
            cv,
            depth_sweep: sweep,
        };
        write_atomic(report, serde_json::to_string_pretty(&tr)?.as_bytes())?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ReplaySummary {
    events: usize,
    verdicts: usize,
    allow: usize,
    deny: usize,
    audit: usize,
    warnings: usize,
    final_phase: String,
    transition_tick: Option<u64>,
}

fn cmd_replay(args: ReplayArgs) -> Result<i32> {
    let trace = parse_trace(BufReader::new(fs::File::open(&args.trace)?))?;
    let plan = EnforcementPlan::from_json(&fs::read_to_string(&args.plan)?)?;
    let spec = read_spec(&args.spec)?;
    let model = match &args.model {
        Some(path) => Some(load_model(path)?),
        None => None,
    };
    let start_phase: Phase = args.phase.parse().map_err(anyhow::Error::msg)?;
    let config = ReplayConfig {
        start_phase,
        t0: args.t0,
        transition_tick: args.transition_tick,
        budget: EvalBudget { max_depth: args.max_depth, ..Default::default() },
        ..Default::default()
    };

    let mut engine = Engine::new(&plan, &spec, model, config)?;
    let outcome = engine.run(&trace)?;
    write_atomic(&args.out, serialize_verdicts(&outcome.verdicts).as_bytes())?;

    let summary = ReplaySummary {
        events: trace.len(),
        verdicts: outcome.verdicts.len(),
        allow: outcome.allow_count,
        deny: outcome.deny_count,
        audit: outcome.audit_count,
        warnings: outcome.warn_count,
        final_phase: outcome.final_phase.as_str().into(),
        transition_tick: outcome.transition_tick,
    };
    println!(
        "replay: {} events, {} allow / {} deny / {} audit; final phase {}{}",
        summary.events,
        summary.allow,
        summary.deny,
        summary.audit,
        summary.final_phase,
        match summary.transition_tick {
            Some(t) => format!(" (transition at tick {t})"),
            None => String::new(),
        }
    );
    if let Some(report) = &args.report {
        write_atomic(report, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    }
    Ok(if outcome.deny_count > 0 { EXIT_DENIED } else { EXIT_OK })
}

#[derive(Serialize)]
struct ScenarioManifest {
    name: String,
    kind: String,
    seed: u64,
    files: BTreeMap<String, String>,
    config: ReplayConfig,
    expected_verdicts: serde_json::Value,
}

fn cmd_scenario(args: ScenarioArgs) -> Result<i32> {
    fs::create_dir_all(&args.out)?;
    if args.name == "training-world" {
        let (spec, trace) = generate_training_world(args.seed, args.types, args.rows, args.separability);
        let base = format!("training-world-{}", args.seed);
        let spec_path = args.out.join(format!("{base}.o2cspec.json"));
        let trace_path = args.out.join(format!("{base}.o2ctrace.jsonl"));
        write_atomic(&spec_path, serde_json::to_string_pretty(&spec)?.as_bytes())?;
        write_atomic(&trace_path, serialize_trace(&trace).as_bytes())?;
        println!("training world: {} events -> {}", trace.len(), trace_path.display());
        return Ok(EXIT_OK);
    }

    let kind: ScenarioKind = args.name.parse().map_err(anyhow::Error::msg)?;
    let mut scenario = Scenario::new(kind, args.seed);
    scenario.params = ScenarioParams { untracked: args.untracked };
    let bundle = generate(&scenario);

    let base = bundle.scenario.name.clone();
    let mut files = BTreeMap::new();
    let ir_path = args.out.join(format!("{base}.o2cir.jsonl"));
    write_atomic(&ir_path, serialize_ir(&bundle.ir).as_bytes())?;
    files.insert("ir".into(), ir_path.file_name().unwrap().to_string_lossy().into_owned());
    let cfg_path = args.out.join(format!("{base}.o2ccfg.json"));
    write_atomic(&cfg_path, serde_json::to_string_pretty(&bundle.cfg)?.as_bytes())?;
    files.insert("cfg".into(), cfg_path.file_name().unwrap().to_string_lossy().into_owned());
    let spec_path = args.out.join(format!("{base}.o2cspec.json"));
    write_atomic(&spec_path, serde_json::to_string_pretty(&bundle.spec)?.as_bytes())?;
    files.insert("spec".into(), spec_path.file_name().unwrap().to_string_lossy().into_owned());
    let trace_path = args.out.join(format!("{base}.o2ctrace.jsonl"));
    write_atomic(&trace_path, serialize_trace(&bundle.trace).as_bytes())?;
    files.insert("trace".into(), trace_path.file_name().unwrap().to_string_lossy().into_owned());

    let manifest = ScenarioManifest {
        name: base.clone(),
        kind: kind.as_str().into(),
        seed: args.seed,
        files,
        config: bundle.config.clone(),
        expected_verdicts: serde_json::to_value(&bundle.expected)?,
    };
    let manifest_path = args.out.join(format!("{base}.o2cscenario.json"));
    write_atomic(&manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    println!(
        "scenario {base}: {} events, {} expected verdicts -> {}",
        bundle.trace.len(),
        bundle.expected.len(),
        manifest_path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let verdicts = parse_verdicts(BufReader::new(fs::File::open(&args.verdicts)?))?;
    let mut by_decision: BTreeMap<String, usize> = BTreeMap::new();
    let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
    for v in &verdicts {
        *by_decision.entry(format!("{:?}", v.decision)).or_default() += 1;
        if let Some(r) = v.reason {
            *by_reason.entry(format!("{r:?}")).or_default() += 1;
        }
    }
    if args.json {
        #[derive(Serialize)]
        struct Report {
            total: usize,
            by_decision: BTreeMap<String, usize>,
            by_reason: BTreeMap<String, usize>,
        }
        println!(
            "{}",
            serde_json::to_string_pretty(&Report { total: verdicts.len(), by_decision, by_reason })?
        );
    } else {
        println!("{} verdicts", verdicts.len());
        for (d, n) in &by_decision {
            println!("  {d:<6} {n}");
        }
        if !by_reason.is_empty() {
            println!("reasons:");
            for (r, n) in &by_reason {
                println!("  {r:<20} {n}");
            }
        }
    }
    let denied = verdicts.iter().any(|v| v.decision == Decision::Deny);
    Ok(if denied { EXIT_DENIED } else { EXIT_OK })
}
