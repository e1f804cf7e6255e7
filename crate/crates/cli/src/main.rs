//! qfade: one executable driving the whole pipeline, from dump XML to
//! experiment reports.
//!
//! Every command can read defaults from a declarative JSON config
//! (`--config`), with flags overriding file values, so an experiment is
//! reproducible from its archived config alone. Output files start with a
//! `# qfade <version> config=<hash>` comment (JSON outputs carry the same
//! information in a `generator` object) tying each artifact to the code
//! and configuration that produced it.
//!
//! Exit codes: 2 for usage and configuration errors, 3 for data errors
//! (malformed dumps, impossible datasets), 4 for environment or artifact
//! corruption.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qfade_core::cohort::{
    self, build_dataset, closed_comparison, forgotten_signal, persistence_overlap,
    view_concentration, views_growth_histogram, CohortConfig, CohortDataset, DatasetSidecar,
};
use qfade_core::evaluate::{run_experiment, DatasetInput, ExperimentPlan};
use qfade_core::featurize::{build_feature_matrix, FeatureGroup};
use qfade_core::ingest::{read_dump, ParseOptions, Post, PostParser, TagParser, UserParser};
use qfade_core::stats::{predictiveness_report, report_to_csv};
use qfade_core::store::{Store, WriteOptions};
use qfade_core::synthgen::{generate, SynthConfig};
use qfade_core::{OutputMeta, PipelineError, Timestamp};

const VERSION: &str = env!("CARGO_PKG_VERSION");

// ---- errors and exit codes -----------------------------------------------

enum CliError {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn exit_code(e: &CliError) -> u8 {
    match e {
        CliError::Usage(_) => 2,
        CliError::Pipeline(p) => match p {
            PipelineError::Config(_) => 2,
            PipelineError::Parse { .. } | PipelineError::Data(_) => 3,
            PipelineError::Io(_) | PipelineError::Format(_) => 4,
        },
    }
}

type CliResult<T> = Result<T, CliError>;

// ---- declarative configuration -------------------------------------------

/// File-level defaults; any command flag overrides its field here.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PipelineConfig {
    store: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    log_level: Option<String>,
    jobs: Option<usize>,
    dumps: Vec<DumpEntry>,
    cohort: Option<CohortConfig>,
    experiment: Option<ExperimentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpEntry {
    posts: PathBuf,
    #[serde(default)]
    users: Option<PathBuf>,
    #[serde(default)]
    tags: Option<PathBuf>,
    dump_time: Timestamp,
}

/// The experiment command's input: labeled datasets plus the plan to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSpec {
    datasets: Vec<DatasetRef>,
    #[serde(default)]
    plan: ExperimentPlan,
}

/// `dataset` is the CSV written by build-dataset; its sidecar is expected
/// next to it with a .json extension.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRef {
    name: String,
    store: PathBuf,
    dataset: PathBuf,
}

fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))
}

// ---- command line ---------------------------------------------------------

#[derive(Parser)]
#[command(name = "qfade", version, about = "Predicts which highly viewed questions are being forgotten", long_about = None)]
struct Cli {
    /// JSON config file supplying defaults for flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Cap on worker threads for parallel sections.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Log filter: error, warn, info, debug, trace.
    #[arg(long, global = true, value_name = "LEVEL")]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse dump XML files and write one snapshot per dump into the store.
    Ingest(IngestArgs),
    /// Label recently highly viewed questions from a dump triple.
    BuildDataset(BuildDatasetArgs),
    /// Emit a plot-ready CSV for one descriptive analysis.
    Analyze(AnalyzeArgs),
    /// Run a repeated-split prediction experiment and write its reports.
    Experiment(ExperimentArgs),
    /// Generate a synthetic dump corpus with a plantable fading signal.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Columnar store directory (created if missing).
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Posts XML. Without it, every dump listed in the config is ingested.
    #[arg(long, value_name = "FILE")]
    posts: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    users: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    tags: Option<PathBuf>,
    /// Publication time of the dump, e.g. 2015-07-01 or full ISO.
    #[arg(long, value_name = "TS")]
    dump_time: Option<String>,
    /// Abort on structurally damaged rows instead of skipping them.
    #[arg(long)]
    strict: bool,
    /// Skip body/title text blobs; the store then supports no text features.
    #[arg(long)]
    no_text: bool,
    /// Stream, validate and count without building or writing a snapshot.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct BuildDatasetArgs {
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Dump triple "T1,T2,T3": last, current, next.
    #[arg(long, value_name = "TS,TS,TS")]
    triple: String,
    /// Nominal months between the triple's dumps.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["3", "6"]))]
    gap: Option<String>,
    /// Output CSV path; the JSON sidecar lands next to it.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Fraction of questions kept as highly viewed.
    #[arg(long)]
    fraction: Option<f64>,
    /// Growth threshold below which a question counts as being forgotten.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long)]
    stale_ceiling: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    /// Fraction of all-time top questions gaining almost no views.
    ForgottenSignal,
    /// Share of a period's views captured by its top-K% questions.
    Concentration,
    /// Persistence of top questions and tags across periods.
    Overlap,
    /// Histogram of views growth over a labeled dataset.
    GrowthHist,
    /// Closed questions against the whole dataset on engagement medians.
    Closed,
    /// Per-feature Mann-Whitney, Spearman and AUC against the labels.
    Predictiveness,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    #[arg(long, value_enum)]
    which: Which,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// forgotten-signal: reference window "T1,T2".
    #[arg(long, value_name = "TS,TS")]
    window: Option<String>,
    /// concentration: period "T1,T2".
    #[arg(long, value_name = "TS,TS")]
    period: Option<String>,
    /// overlap: period boundaries "T1,T2,T3,..."; consecutive pairs form
    /// the compared periods.
    #[arg(long, value_name = "TS,...")]
    boundaries: Option<String>,
    /// growth-hist, closed, predictiveness: dataset CSV from build-dataset.
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,
    /// growth-hist: comma-separated bin edges.
    #[arg(long, value_name = "X,...", allow_hyphen_values = true)]
    edges: Option<String>,
    /// forgotten-signal, concentration: top-percent grid override.
    #[arg(long, value_name = "X,...")]
    grid: Option<String>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    stale_ceiling: Option<u64>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment file: dataset references plus the plan.
    #[arg(long, value_name = "FILE")]
    plan: Option<PathBuf>,
    /// Directory for table.csv, bins.csv, importance.csv, manifest.json
    /// and timings.log.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator parameters as JSON; defaults are used when omitted.
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
    /// Directory receiving one subdirectory per dump plus manifest.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    questions: Option<u64>,
    /// Fraction of selected questions whose label is forced by the signal.
    #[arg(long)]
    signal: Option<f64>,
}

// ---- shared helpers --------------------------------------------------------

fn parse_time(s: &str) -> CliResult<Timestamp> {
    Timestamp::parse(s.trim()).map_err(|e| usage(format!("bad timestamp {s:?}: {e}")))
}

fn parse_time_list(s: &str, expect: Option<usize>) -> CliResult<Vec<Timestamp>> {
    let times: Vec<Timestamp> =
        s.split(',').map(parse_time).collect::<CliResult<_>>()?;
    if let Some(n) = expect {
        if times.len() != n {
            return Err(usage(format!("expected {n} comma-separated timestamps, got {}", times.len())));
        }
    }
    Ok(times)
}

fn parse_f64_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| usage(format!("bad number {p:?}: {e}"))))
        .collect()
}

fn require_exists(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn require_flag<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| usage(format!("{flag} is required here")))
}

/// Store path from flag or config; the path must already exist for
/// read-only commands so a typo cannot silently create an empty store.
fn resolve_store(flag: Option<PathBuf>, config: &PipelineConfig, must_exist: bool) -> CliResult<PathBuf> {
    let path = flag
        .or_else(|| config.store.clone())
        .ok_or_else(|| usage("--store is required (flag or config)"))?;
    if must_exist {
        require_exists(&path, "store")?;
    }
    Ok(path)
}

/// Short hash of the effective configuration, stamped into output headers.
fn config_hash(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(16);
    for b in &digest[..8] {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

fn meta_for(config: &impl Serialize) -> OutputMeta {
    OutputMeta {
        tool_version: VERSION.to_string(),
        config_hash: config_hash(config),
    }
}

fn write_csv(path: &Path, meta: &OutputMeta, body: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(PipelineError::from)?;
    }
    fs::write(path, format!("{}\n{body}", meta.comment_line())).map_err(PipelineError::from)?;
    Ok(())
}

/// JSON cannot carry a comment line, so the same traceability fields go
/// into a `generator` object at the top level.
fn write_json(path: &Path, meta: &OutputMeta, value: &impl Serialize) -> CliResult<()> {
    let mut v = serde_json::to_value(value)
        .map_err(|e| PipelineError::format(format!("serialize {}: {e}", path.display())))?;
    let obj = v
        .as_object_mut()
        .expect("json outputs are objects");
    obj.insert(
        "generator".to_string(),
        serde_json::json!({ "tool_version": meta.tool_version, "config_hash": meta.config_hash }),
    );
    let mut text = serde_json::to_string_pretty(&v)
        .map_err(|e| PipelineError::format(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(PipelineError::from)?;
    }
    fs::write(path, text).map_err(PipelineError::from)?;
    Ok(())
}

/// Drops leading `# ...` header lines from an emitted CSV.
fn strip_header_comments(text: &str) -> String {
    text.lines()
        .skip_while(|l| l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn read_dataset(csv_path: &Path) -> CliResult<(CohortDataset, DatasetSidecar)> {
    require_exists(csv_path, "dataset")?;
    let sidecar_path = csv_path.with_extension("json");
    require_exists(&sidecar_path, "dataset sidecar")?;
    let csv = fs::read_to_string(csv_path).map_err(PipelineError::from)?;
    let sidecar_text = fs::read_to_string(&sidecar_path).map_err(PipelineError::from)?;
    let sidecar: DatasetSidecar = serde_json::from_str(&sidecar_text)
        .map_err(|e| PipelineError::format(format!("sidecar {}: {e}", sidecar_path.display())))?;
    let dataset = cohort::dataset_from_csv(&strip_header_comments(&csv), &sidecar)?;
    Ok((dataset, sidecar))
}

// ---- ingest ----------------------------------------------------------------

fn cmd_ingest(args: IngestArgs, config: &PipelineConfig) -> CliResult<()> {
    let store_path = args
        .store
        .clone()
        .or_else(|| config.store.clone())
        .ok_or_else(|| usage("--store is required (flag or config)"))?;
    let dumps: Vec<DumpEntry> = if let Some(posts) = args.posts.clone() {
        let dump_time = parse_time(&require_flag(args.dump_time.clone(), "--dump-time")?)?;
        vec![DumpEntry { posts, users: args.users.clone(), tags: args.tags.clone(), dump_time }]
    } else {
        if config.dumps.is_empty() {
            return Err(usage("no --posts flag and no dumps in the config"));
        }
        config.dumps.clone()
    };
    for d in &dumps {
        require_exists(&d.posts, "posts file")?;
        for opt in [&d.users, &d.tags].into_iter().flatten() {
            require_exists(opt, "dump file")?;
        }
    }

    let opts = ParseOptions { strict: args.strict };
    if args.dry_run {
        for d in &dumps {
            let counters = stream_count(d, opts)?;
            println!(
                "dry-run dump {}: rows={} questions={} answers={} users={} tags={} skipped_other_type={} skipped_malformed={}",
                d.dump_time,
                counters.rows,
                counters.questions,
                counters.answers,
                counters.users,
                counters.tags,
                counters.skipped_other_type,
                counters.skipped_malformed
            );
        }
        return Ok(());
    }

    let mut store = Store::open(&store_path)?;
    for d in &dumps {
        let replacing = store.has_snapshot(d.dump_time);
        let (snap, counters, warnings) =
            read_dump(d.dump_time, &d.posts, d.users.as_deref(), d.tags.as_deref(), opts)?;
        for w in &warnings {
            log::warn!("skipped row at byte {}: {}", w.byte_offset, w.reason);
        }
        store.write_snapshot(&snap, WriteOptions { include_text: !args.no_text })?;
        println!(
            "{} dump {}: rows={} questions={} answers={} users={} tags={} skipped_other_type={} skipped_malformed={}",
            if replacing { "replaced" } else { "ingested" },
            d.dump_time,
            counters.rows,
            counters.questions,
            counters.answers,
            counters.users,
            counters.tags,
            counters.skipped_other_type,
            counters.skipped_malformed
        );
    }
    Ok(())
}

/// Streams every row through the parsers without keeping records, so dump
/// size never affects memory.
fn stream_count(d: &DumpEntry, opts: ParseOptions) -> CliResult<qfade_core::ingest::ParseCounters> {
    let open = |p: &Path| -> CliResult<BufReader<fs::File>> {
        Ok(BufReader::with_capacity(1 << 16, fs::File::open(p).map_err(PipelineError::from)?))
    };
    let mut total = qfade_core::ingest::ParseCounters::default();
    let mut posts = PostParser::new(open(&d.posts)?, d.dump_time, opts);
    for post in &mut posts {
        match post? {
            Post::Question(_) | Post::Answer(_) => {}
        }
    }
    total.merge(posts.counters());
    if let Some(p) = &d.users {
        let mut users = UserParser::new(open(p)?, opts);
        for u in &mut users {
            u?;
        }
        total.merge(users.counters());
    }
    if let Some(p) = &d.tags {
        let mut tags = TagParser::new(open(p)?, opts);
        for t in &mut tags {
            t?;
        }
        total.merge(tags.counters());
    }
    Ok(total)
}

// ---- build-dataset ---------------------------------------------------------

fn cohort_from(config: &PipelineConfig) -> CohortConfig {
    config.cohort.clone().unwrap_or_default()
}

#[derive(Serialize)]
struct BuildDatasetEffective<'a> {
    triple: [Timestamp; 3],
    cohort: &'a CohortConfig,
}

fn cmd_build_dataset(args: BuildDatasetArgs, config: &PipelineConfig) -> CliResult<()> {
    let store_path = resolve_store(args.store.clone(), config, true)?;
    let times = parse_time_list(&args.triple, Some(3))?;
    let mut cohort_config = cohort_from(config);
    if let Some(gap) = &args.gap {
        cohort_config.gap_months = gap.parse().expect("validated by clap");
    }
    if let Some(f) = args.fraction {
        cohort_config.highly_viewed_fraction = f;
    }
    if let Some(t) = args.threshold {
        cohort_config.forgotten_growth_threshold = t;
    }
    if let Some(c) = args.stale_ceiling {
        cohort_config.stale_view_ceiling = c;
    }

    let store = Store::open(&store_path)?;
    let dataset = build_dataset(&store, times[0], times[1], times[2], &cohort_config)?;

    let effective = BuildDatasetEffective {
        triple: [times[0], times[1], times[2]],
        cohort: &cohort_config,
    };
    let meta = meta_for(&effective);
    write_csv(&args.out, &meta, &cohort::dataset_to_csv(&dataset))?;
    let sidecar = DatasetSidecar::new(&dataset, &cohort_config);
    write_json(&args.out.with_extension("json"), &meta, &sidecar)?;

    println!("dataset                              #total  #being_forgotten  #unforgotten");
    println!(
        "{} .. {} .. {}  {:>6}  {:>16}  {:>12}",
        dataset.last_dump,
        dataset.current_dump,
        dataset.next_dump,
        dataset.total,
        dataset.being_forgotten,
        dataset.unforgotten
    );
    if dataset.dropped_absent_next > 0 {
        log::warn!("{} selected questions were absent from the next dump", dataset.dropped_absent_next);
    }
    Ok(())
}

// ---- analyze ---------------------------------------------------------------

#[derive(Serialize)]
struct AnalyzeEffective<'a> {
    which: &'a str,
    cohort: &'a CohortConfig,
    window: Option<[Timestamp; 2]>,
    period: Option<[Timestamp; 2]>,
    boundaries: Option<Vec<Timestamp>>,
    dataset: Option<&'a Path>,
    edges: Option<&'a [f64]>,
}

fn cmd_analyze(args: AnalyzeArgs, config: &PipelineConfig) -> CliResult<()> {
    let mut cohort_config = cohort_from(config);
    if let Some(f) = args.fraction {
        cohort_config.highly_viewed_fraction = f;
    }
    if let Some(c) = args.stale_ceiling {
        cohort_config.stale_view_ceiling = c;
    }
    if let Some(grid) = &args.grid {
        cohort_config.top_n_percent_grid = parse_f64_list(grid)?;
    }

    let which_name = match args.which {
        Which::ForgottenSignal => "forgotten-signal",
        Which::Concentration => "concentration",
        Which::Overlap => "overlap",
        Which::GrowthHist => "growth-hist",
        Which::Closed => "closed",
        Which::Predictiveness => "predictiveness",
    };
    let mut effective = AnalyzeEffective {
        which: which_name,
        cohort: &cohort_config,
        window: None,
        period: None,
        boundaries: None,
        dataset: args.dataset.as_deref(),
        edges: None,
    };

    let open_store = |flag: &Option<PathBuf>| -> CliResult<Store> {
        let path = resolve_store(flag.clone(), config, true)?;
        let store = Store::open(&path)?;
        if store.dump_times().is_empty() {
            return Err(CliError::Pipeline(PipelineError::data(format!(
                "store {} holds no snapshots",
                path.display()
            ))));
        }
        Ok(store)
    };

    let body = match args.which {
        Which::ForgottenSignal => {
            let store = open_store(&args.store)?;
            let w = parse_time_list(&require_flag(args.window.clone(), "--window")?, Some(2))?;
            effective.window = Some([w[0], w[1]]);
            let mut dump_times = store.dump_times();
            dump_times.sort();
            let rows = forgotten_signal(&store, &dump_times, (w[0], w[1]), &cohort_config)?;
            cohort::signal_to_csv(&rows)
        }
        Which::Concentration => {
            let store = open_store(&args.store)?;
            let p = parse_time_list(&require_flag(args.period.clone(), "--period")?, Some(2))?;
            effective.period = Some([p[0], p[1]]);
            let rows =
                view_concentration(&store, p[0], p[1], &cohort_config.top_n_percent_grid)?;
            cohort::concentration_to_csv(&rows)
        }
        Which::Overlap => {
            let store = open_store(&args.store)?;
            let b =
                parse_time_list(&require_flag(args.boundaries.clone(), "--boundaries")?, None)?;
            if b.len() < 3 {
                return Err(usage("--boundaries needs at least 3 timestamps"));
            }
            effective.boundaries = Some(b.clone());
            let periods: Vec<(Timestamp, Timestamp)> =
                b.windows(2).map(|w| (w[0], w[1])).collect();
            let pairs: Vec<_> = periods.windows(2).map(|w| (w[0], w[1])).collect();
            let rows = persistence_overlap(&store, &pairs, &cohort_config)?;
            cohort::overlap_to_csv(&rows)
        }
        Which::GrowthHist => {
            let dataset_path = require_flag(args.dataset.clone(), "--dataset")?;
            let (dataset, _) = read_dataset(&dataset_path)?;
            let edges = match &args.edges {
                Some(e) => parse_f64_list(e)?,
                None => vec![-1.0, -0.75, -0.5, -0.25, -0.05, 0.0, 0.25, 0.5, 0.75, 1.0],
            };
            let hist = views_growth_histogram(&dataset, &edges)?;
            effective.edges = Some(&edges);
            let body = cohort::histogram_to_csv(&hist);
            let meta = meta_for(&effective);
            write_csv(&args.out, &meta, &body)?;
            println!("wrote {}", args.out.display());
            return Ok(());
        }
        Which::Closed => {
            let store = open_store(&args.store)?;
            let dataset_path = require_flag(args.dataset.clone(), "--dataset")?;
            let (dataset, _) = read_dataset(&dataset_path)?;
            let cmp = closed_comparison(&store, &dataset, dataset.current_dump)?;
            cohort::closed_comparison_to_csv(&cmp)
        }
        Which::Predictiveness => {
            let store = open_store(&args.store)?;
            let dataset_path = require_flag(args.dataset.clone(), "--dataset")?;
            let (dataset, _) = read_dataset(&dataset_path)?;
            let matrix =
                build_feature_matrix(&store, &dataset, &FeatureGroup::all_dense(), None)?;
            let rows = predictiveness_report(&matrix, &dataset)?;
            report_to_csv(&rows)
        }
    };

    let meta = meta_for(&effective);
    write_csv(&args.out, &meta, &body)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

// ---- experiment ------------------------------------------------------------

fn cmd_experiment(args: ExperimentArgs, config: &PipelineConfig) -> CliResult<()> {
    let spec: ExperimentSpec = match &args.plan {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read plan {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("bad plan {}: {e}", path.display())))?
        }
        None => config
            .experiment
            .clone()
            .ok_or_else(|| usage("--plan is required (flag or config)"))?,
    };
    let out_dir = args
        .out
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| usage("--out is required (flag or config)"))?;
    if spec.datasets.is_empty() {
        return Err(usage("the plan lists no datasets"));
    }
    // All referenced artifacts are checked before any training starts.
    for d in &spec.datasets {
        require_exists(&d.store, "store")?;
        require_exists(&d.dataset, "dataset")?;
        require_exists(&d.dataset.with_extension("json"), "dataset sidecar")?;
    }
    spec.plan
        .validate()
        .map_err(CliError::Pipeline)?;

    let mut stores = Vec::with_capacity(spec.datasets.len());
    let mut datasets = Vec::with_capacity(spec.datasets.len());
    for d in &spec.datasets {
        stores.push(Store::open(&d.store)?);
        let (dataset, _) = read_dataset(&d.dataset)?;
        datasets.push(dataset);
    }
    let inputs: Vec<DatasetInput> = spec
        .datasets
        .iter()
        .zip(stores.iter())
        .zip(datasets)
        .map(|((d, store), dataset)| DatasetInput { name: d.name.clone(), store, dataset })
        .collect();

    let report = run_experiment(&spec.plan, &inputs)?;

    let meta = meta_for(&spec);
    fs::create_dir_all(&out_dir).map_err(PipelineError::from)?;
    write_csv(&out_dir.join("table.csv"), &meta, &report.table_csv())?;
    write_csv(&out_dir.join("bins.csv"), &meta, &report.bins_csv())?;
    write_csv(&out_dir.join("importance.csv"), &meta, &report.importance_csv())?;
    write_json(&out_dir.join("manifest.json"), &meta, &report)?;
    // Wall-clock timings stay out of the manifest so re-runs compare
    // byte for byte; they land in their own file.
    fs::write(out_dir.join("timings.log"), report.timings_log()).map_err(PipelineError::from)?;

    println!("feature_set               gap  f1 min/max/avg        accuracy min/max/avg");
    for a in &report.aggregates {
        println!(
            "{:<25} {:>4} {:.4}/{:.4}/{:.4}  {:.4}/{:.4}/{:.4}",
            a.feature_set.label(),
            a.gap_months,
            a.f1_min,
            a.f1_max,
            a.f1_avg,
            a.accuracy_min,
            a.accuracy_max,
            a.accuracy_avg
        );
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

// ---- synth -----------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let mut params: SynthConfig = match &args.params {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read params {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("bad params {}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = args.seed {
        params.seed = s;
    }
    if let Some(q) = args.questions {
        params.n_questions = q;
    }
    if let Some(s) = args.signal {
        params.signal_strength = s;
    }

    let corpus = generate(&params, &args.out)?;
    for f in &corpus.files {
        println!("dump {}: {}", f.dump_time, f.posts.display());
    }
    if let Some(expected) = &corpus.manifest.expected {
        println!(
            "expected dataset: total={} being_forgotten={} unforgotten={}",
            expected.total, expected.being_forgotten, expected.unforgotten
        );
    }
    println!("manifest: {}", corpus.manifest_path.display());
    Ok(())
}

// ---- entry -----------------------------------------------------------------

fn run(cli: Cli) -> CliResult<()> {
    let config = load_config(cli.config.as_deref())?;

    let level = cli
        .log_level
        .clone()
        .or_else(|| config.log_level.clone())
        .unwrap_or_else(|| "info".to_string());
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&level))
        .format_timestamp(None)
        .init();

    if let Some(jobs) = cli.jobs.or(config.jobs) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| usage(format!("--jobs: {e}")))?;
    }

    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, &config),
        Command::BuildDataset(args) => cmd_build_dataset(args, &config),
        Command::Analyze(args) => cmd_analyze(args, &config),
        Command::Experiment(args) => cmd_experiment(args, &config),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
