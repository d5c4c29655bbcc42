use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ontopop::harness::{self, HarnessError, KbParams, NoiseProfile};
use ontopop::metrics::{self, ErrorAnnotation, MetricsError};
use ontopop::oracle::{
    CacheOnlyBackend, DryRunBackend, HttpBackend, Oracle, OracleError, ResponseCache, RetryPolicy,
    SamplingParams, ScriptedBackend, DEFAULT_BACKOFF_FACTOR, DEFAULT_MAX_RETRIES,
    DEFAULT_MAX_TOKENS,
};
use ontopop::parser::{RefusalRuleSet, ResponseParser};
use ontopop::phases::{
    run_pipeline, Phase, PhaseError, PhaseSet, PipelineConfig, RunDirectory, DEFAULT_LAMBDA,
};
use ontopop::templates::TemplateError;
use ontopop::{Ontology, OntologyError, TemplateLibrary};

#[derive(Parser)]
#[command(
    name = "ontopop",
    version,
    about = "Populate ontology skeletons from a language-model oracle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query individuals for every class.
    Populate(PipelineArgs),
    /// Query relations for every individual in a property's domain.
    Relate(PipelineArgs),
    /// Move individuals down to their best-matching subclass.
    Redistribute(PipelineArgs),
    /// Merge near-duplicate individuals confirmed by the oracle.
    Merge(PipelineArgs),
    /// All four phases in order.
    Run(PipelineArgs),
    /// Print structural measures of an ontology.
    Stats(StatsArgs),
    /// Print error ratios from an annotation file.
    Report(ReportArgs),
    /// Evaluate the pipeline against a synthetic ground truth.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BackendKind {
    Http,
    Scripted,
    CacheOnly,
}

#[derive(Args)]
struct PipelineArgs {
    /// Input ontology (JSON).
    #[arg(long)]
    ontology: PathBuf,
    /// Query template library (JSON); the built-in food templates when omitted.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Refusal rules, one regular expression per line.
    #[arg(long)]
    refusals: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "http")]
    backend: BackendKind,
    /// Script file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Chat-completions base URL for the http backend.
    #[arg(long, env = "ORACLE_BASE_URL")]
    base_url: Option<String>,
    /// Backend id a cache-only replay impersonates.
    #[arg(long, default_value = "http")]
    replay_backend: String,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    /// Sampling temperature; 0.7 for gpt models and 0.1 otherwise when omitted.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
    max_tokens: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
    max_retries: u32,
    /// Delay before the first retry, in seconds.
    #[arg(long, default_value_t = 30.0)]
    backoff_initial: f64,
    #[arg(long, default_value_t = DEFAULT_BACKOFF_FACTOR)]
    backoff_factor: f64,
    /// Minimum common-substring length (exclusive) for merge candidates.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: usize,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Class whose subtree is processed; the whole taxonomy when omitted.
    #[arg(long)]
    root_class: Option<String>,
    /// Restrict relate to these properties.
    #[arg(long = "property")]
    properties: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "run")]
    run_id: String,
    /// Print the queries that would be issued instead of calling a backend.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    ontology: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    ontology: PathBuf,
    /// CSV with header kind,id_or_triple,tags.
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    branching: usize,
    #[arg(long, default_value_t = 5)]
    members: usize,
    #[arg(long, default_value_t = 2)]
    relations: usize,
    #[arg(long, default_value_t = 0.0)]
    hallucination: f64,
    #[arg(long, default_value_t = 0.0)]
    refusal: f64,
    #[arg(long, default_value_t = 0.0)]
    duplication: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: usize,
    /// Comma-separated hallucination rates; reports means over --seeds runs.
    #[arg(long, value_delimiter = ',')]
    sweep: Vec<f64>,
    /// Number of consecutive seeds, starting at --seed, for a sweep.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Directory for the KB, final ontology, audit log and evaluation.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "sim")]
    run_id: String,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

#[derive(Serialize)]
struct RunManifest<'a> {
    run_id: &'a str,
    command: &'a str,
    ontology: &'a Path,
    templates: Option<&'a Path>,
    backend: BackendManifest<'a>,
    params: &'a SamplingParams,
    max_retries: u32,
    backoff_initial_secs: f64,
    backoff_factor: f64,
    lambda: usize,
    root_class: &'a str,
    cache_dir: Option<&'a Path>,
    out: &'a Path,
}

#[derive(Serialize)]
struct BackendManifest<'a> {
    kind: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    script: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_url: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    replay_backend: Option<&'a str>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    ontopop::write_atomic(path, text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

fn sampling_params(args: &PipelineArgs) -> Result<SamplingParams> {
    let mut params = SamplingParams::for_model(&args.model);
    params.max_tokens = args.max_tokens;
    if let Some(t) = args.temperature {
        params.temperature = t;
    }
    params
        .validate()
        .map_err(|e| UsageError(e.to_string()).into())
        .map(|_| params)
}

fn build_oracle(args: &PipelineArgs, dry_run: Option<Arc<DryRunBackend>>) -> Result<Oracle> {
    let policy = RetryPolicy::new(
        args.max_retries,
        Duration::try_from_secs_f64(args.backoff_initial)
            .map_err(|e| UsageError(format!("--backoff-initial: {e}")))?,
        args.backoff_factor,
    )
    .map_err(|e| UsageError(e.to_string()))?;
    if let Some(backend) = dry_run {
        return Ok(Oracle::new(backend).with_policy(policy));
    }
    let oracle = match args.backend {
        BackendKind::Http => {
            let base = args.base_url.as_deref().ok_or_else(|| {
                UsageError("the http backend needs --base-url or ORACLE_BASE_URL".into())
            })?;
            Oracle::new(HttpBackend::new(
                base,
                std::env::var(ontopop::oracle::API_KEY_ENV).ok(),
            ))
        }
        BackendKind::Scripted => {
            let path = args
                .script
                .as_deref()
                .ok_or_else(|| UsageError("the scripted backend needs --script".into()))?;
            Oracle::new(ScriptedBackend::load(path).map_err(UsageError)?)
        }
        BackendKind::CacheOnly => {
            if args.cache_dir.is_none() {
                return Err(UsageError("the cache-only backend needs --cache-dir".into()).into());
            }
            Oracle::new(CacheOnlyBackend::new(&args.replay_backend))
        }
    };
    let oracle = oracle.with_policy(policy);
    Ok(match &args.cache_dir {
        Some(dir) => oracle.with_cache(ResponseCache::open(dir)?),
        None => oracle,
    })
}

fn pipeline(
    command: &str,
    args: &PipelineArgs,
    phases: PhaseSet,
    single: Option<Phase>,
) -> Result<()> {
    let mut ontology = Ontology::load(&args.ontology)?;
    let library = match &args.templates {
        Some(path) => TemplateLibrary::load(path)?,
        None => {
            log::info!("no --templates given, using the built-in food templates");
            TemplateLibrary::food()
        }
    };
    let parser = match &args.refusals {
        Some(path) => {
            ResponseParser::new(RefusalRuleSet::load(path).map_err(|e| UsageError(e.to_string()))?)
        }
        None => ResponseParser::default(),
    };
    let params = sampling_params(args)?;
    let mut config = PipelineConfig::new(library, params.clone());
    config.parser = parser;
    config.lambda = args.lambda;
    config.phases = phases;
    config.properties = args.properties.clone();
    if let Some(root) = &args.root_class {
        config.root_class = root.clone();
    }

    if args.dry_run {
        let backend = Arc::new(DryRunBackend::new());
        let oracle = build_oracle(args, Some(backend.clone()))?;
        let mut records = Vec::new();
        run_pipeline(&mut ontology, &config, &oracle, &mut records)?;
        for query in backend.queries() {
            println!("{query}");
        }
        return Ok(());
    }

    let oracle = build_oracle(args, None)?;
    let manifest = RunManifest {
        run_id: &args.run_id,
        command,
        ontology: &args.ontology,
        templates: args.templates.as_deref(),
        backend: BackendManifest {
            kind: args.backend,
            script: matches!(args.backend, BackendKind::Scripted)
                .then_some(args.script.as_deref())
                .flatten(),
            base_url: matches!(args.backend, BackendKind::Http)
                .then_some(args.base_url.as_deref())
                .flatten(),
            replay_backend: matches!(args.backend, BackendKind::CacheOnly)
                .then_some(args.replay_backend.as_str()),
        },
        params: &params,
        max_retries: args.max_retries,
        backoff_initial_secs: args.backoff_initial,
        backoff_factor: args.backoff_factor,
        lambda: args.lambda,
        root_class: &config.root_class,
        cache_dir: args.cache_dir.as_deref(),
        out: &args.out,
    };
    let mut run_dir = match single {
        Some(phase) => RunDirectory::for_phase(&args.out, &args.run_id, phase),
        None => RunDirectory::create(&args.out, &args.run_id),
    }
    .with_context(|| format!("creating {}", args.out.display()))?;
    write_json(
        &args.out.join(format!("{}.manifest.json", args.run_id)),
        &manifest,
    )?;

    run_pipeline(&mut ontology, &config, &oracle, &mut run_dir)?;
    if single.is_none() {
        run_dir.write_final(&ontology)?;
    }
    log::info!(
        "{} oracle calls recorded, output in {}",
        run_dir.records().len(),
        args.out.display()
    );
    Ok(())
}

fn stats(args: &StatsArgs) -> Result<()> {
    let o = Ontology::load(&args.ontology)?;
    let s = metrics::structural_stats(&o);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        print!("{}", s.table());
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let o = Ontology::load(&args.ontology)?;
    let ann = ErrorAnnotation::load_csv(&args.annotations)?;
    let (stats, report) = metrics::evaluate(&o, &ann)?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({ "stats": stats, "errors": report }))?
        );
    } else {
        print!("{}", report.table(&stats));
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let params = KbParams {
        n_classes: args.classes,
        branching: args.branching,
        members_per_class: args.members,
        relations_per_member: args.relations,
    };
    if !args.sweep.is_empty() {
        let seeds: Vec<u64> = (args.seed..args.seed + args.seeds.max(1)).collect();
        let rows = harness::noise_sweep(
            params,
            &seeds,
            &args.sweep,
            args.refusal,
            args.duplication,
            args.lambda,
        )?;
        let cells: Vec<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "{:>6.3}  {:>8.4}  {:>8.4}  {:>12.4}",
                    r.hallucination_rate, r.mean_rie, r.mean_rre, r.mean_completeness
                )
            })
            .collect();
        println!(
            "{:>6}  {:>8}  {:>8}  {:>12}",
            "h", "RIE", "RRE", "completeness"
        );
        for line in cells {
            println!("{line}");
        }
        if let Some(out) = &args.out {
            write_json(&out.join(format!("{}.sweep.json", args.run_id)), &rows)?;
        }
        return Ok(());
    }

    let kb = Arc::new(harness::generate_kb(args.seed, params)?);
    let profile = NoiseProfile::new(
        args.hallucination,
        args.refusal,
        args.duplication,
        args.seed,
    )?;
    let sim = harness::simulate(&kb, profile, args.lambda)?;
    let e = &sim.evaluation;
    print!("{}", e.errors.table(&e.stats));
    println!(
        "completeness {}  oracle calls {}",
        e.completeness, sim.oracle_calls
    );
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        harness::save_kb(&kb, &out.join("kb.json"))?;
        sim.ontology
            .save(&out.join(format!("{}.json", args.run_id)))?;
        let mut audit = String::new();
        for r in &sim.records {
            audit.push_str(&serde_json::to_string(r)?);
            audit.push('\n');
        }
        ontopop::write_atomic(
            &out.join(format!("{}.audit.jsonl", args.run_id)),
            audit.as_bytes(),
        )?;
        ontopop::write_atomic(
            &out.join(format!("{}.annotations.csv", args.run_id)),
            e.annotation.to_csv().as_bytes(),
        )?;
        write_json(
            &out.join(format!("{}.evaluation.json", args.run_id)),
            &serde_json::json!({
                "seed": args.seed,
                "kb": params,
                "noise": profile,
                "stats": e.stats,
                "errors": e.errors,
                "completeness": e.completeness,
                "oracle_calls": sim.oracle_calls,
            }),
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Populate(a) => pipeline(
            "populate",
            a,
            PhaseSet::only(Phase::Populate),
            Some(Phase::Populate),
        ),
        Command::Relate(a) => pipeline(
            "relate",
            a,
            PhaseSet::only(Phase::Relate),
            Some(Phase::Relate),
        ),
        Command::Redistribute(a) => pipeline(
            "redistribute",
            a,
            PhaseSet::only(Phase::Redistribute),
            Some(Phase::Redistribute),
        ),
        Command::Merge(a) => pipeline("merge", a, PhaseSet::only(Phase::Merge), Some(Phase::Merge)),
        Command::Run(a) => pipeline("run", a, PhaseSet::default(), None),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report(a),
        Command::Simulate(a) => simulate(a),
    }
}

/// 2 usage, 3 oracle exhaustion or rejection, 4 validation, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<PhaseError>() {
            return match e {
                PhaseError::Oracle { .. } => 3,
                PhaseError::Output(_) => 1,
                PhaseError::Config(_) | PhaseError::Template(_) | PhaseError::Ontology(_) => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<HarnessError>() {
            return match e {
                HarnessError::InvalidParams(_) => 2,
                HarnessError::Io(_) => 1,
                HarnessError::Phase(PhaseError::Oracle { .. }) => 3,
                _ => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<OntologyError>() {
            return if matches!(e, OntologyError::Io { .. }) {
                1
            } else {
                4
            };
        }
        if let Some(e) = cause.downcast_ref::<TemplateError>() {
            return if matches!(e, TemplateError::Io { .. }) {
                1
            } else {
                4
            };
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return if matches!(e, MetricsError::Io(_)) {
                1
            } else {
                4
            };
        }
        if let Some(e) = cause.downcast_ref::<OracleError>() {
            return if matches!(e, OracleError::Cache(_)) {
                1
            } else {
                3
            };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
