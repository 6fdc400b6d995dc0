use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use clap::{Args, CommandFactory, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use serde::Serialize;
use subbitext::catalog::{filter_report, load_catalog, CatalogError, FilterStage};
use subbitext::config::{Config, ConfigError};
use subbitext::corpus::render_filter_table;
use subbitext::lang::LangCode;
use subbitext::pipeline::{self, FetchOptions, PipelineError};
use subbitext::store::{Stage, Store};

const DEFAULT_CONFIG: &str = "subbitext.toml";

#[derive(Parser, Debug)]
#[command(name = "subbitext", version, about = "Build a parallel corpus from synchronized movie subtitles")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Configuration file [default: ./subbitext.toml when present]
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory holding the per-language-pair stores
    #[arg(long, global = true, value_name = "DIR")]
    data_root: Option<PathBuf>,
    /// Videos searched concurrently during fetch
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for the run id
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print one JSON summary per step on stdout
    #[arg(long, global = true)]
    porcelain: bool,
    /// Largest start or end difference for two cues to match
    #[arg(long, global = true, value_name = "MS")]
    sync_tolerance_ms: Option<u64>,
    /// Share of cues that must match for a pair to count as synchronized
    #[arg(long, global = true, value_name = "FRACTION")]
    sync_min_fraction: Option<f64>,
    /// Largest timeline offset tried when repairing a pair
    #[arg(long, global = true, value_name = "MS")]
    max_shift_ms: Option<u64>,
    /// Granularity of the offset search
    #[arg(long, global = true, value_name = "MS")]
    shift_step_ms: Option<u64>,
    /// Only accept pairs that are synchronized without shifting
    #[arg(long, global = true)]
    no_shift: bool,
    /// More log output on stderr (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug, Clone)]
struct Langs {
    /// Source language (two-letter code)
    #[arg(value_parser = parse_lang)]
    src: LangCode,
    /// Target language (two-letter code)
    #[arg(value_parser = parse_lang)]
    dst: LangCode,
}

fn parse_lang(s: &str) -> Result<LangCode, String> {
    s.parse::<LangCode>().map_err(|e| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load the movie catalog into the store
    Init {
        #[command(flatten)]
        langs: Langs,
        /// Catalog file, overriding the configured one
        #[arg(long, value_name = "CSV")]
        catalog: Option<PathBuf>,
    },
    /// Show how many movies each filter bound keeps
    Filter {
        #[command(flatten)]
        langs: Langs,
        /// Read this catalog file instead of the stored catalog
        #[arg(long, value_name = "CSV")]
        catalog: Option<PathBuf>,
    },
    /// Search a synchronized subtitle pair for every filtered movie
    Fetch {
        #[command(flatten)]
        langs: Langs,
        /// Stop after this many newly searched movies
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Extract dialogue pairs from the stored subtitle pairs
    Dialogues {
        #[command(flatten)]
        langs: Langs,
    },
    /// Split dialogues into sentence pairs
    Match {
        #[command(flatten)]
        langs: Langs,
    },
    /// Write the corpus files and statistics
    Generate {
        #[command(flatten)]
        langs: Langs,
    },
    /// Print statistics of the store
    Stats {
        #[command(flatten)]
        langs: Langs,
    },
    /// Run every step in order
    Run {
        #[command(flatten)]
        langs: Langs,
        /// Catalog file, overriding the configured one
        #[arg(long, value_name = "CSV")]
        catalog: Option<PathBuf>,
        /// Stop fetching after this many newly searched movies
        #[arg(long)]
        limit: Option<usize>,
    },
}

impl Command {
    fn langs(&self) -> &Langs {
        match self {
            Command::Init { langs, .. }
            | Command::Filter { langs, .. }
            | Command::Fetch { langs, .. }
            | Command::Dialogues { langs }
            | Command::Match { langs }
            | Command::Generate { langs }
            | Command::Stats { langs }
            | Command::Run { langs, .. } => langs,
        }
    }
}

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    Usage(message.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Complete,
    /// Some videos failed to fetch.
    Partial,
}

struct Ctx {
    config: Config,
    langs: Langs,
    store: Store,
    run_id: String,
    porcelain: bool,
}

impl Ctx {
    fn summary<T: Serialize>(&self, step: &str, value: &T, human: impl FnOnce() -> String) {
        if self.porcelain {
            let mut json = serde_json::to_value(value).expect("summary serializes");
            if let Some(obj) = json.as_object_mut() {
                obj.insert("step".into(), step.into());
            }
            println!("{json}");
        } else {
            println!("{}", human().trim_end());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            if is_usage(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<Usage>()
            || e.is::<ConfigError>()
            || e.is::<CatalogError>()
            || e.is::<subbitext::sync::SyncError>()
            || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Catalog(_)))
    })
}

fn load_config(global: &Global, command: &Command) -> Result<Config> {
    let path = match &global.config {
        Some(p) => Some(p.clone()),
        None => Some(PathBuf::from(DEFAULT_CONFIG)).filter(|p| p.exists()),
    };
    let mut config = match path {
        Some(p) => Config::load(&p)?,
        None if matches!(command, Command::Run { .. }) => {
            let help = Cli::command().render_usage();
            return Err(usage(format!("run needs a configuration file (--config or ./{DEFAULT_CONFIG})\n\n{help}")));
        }
        None => Config::default(),
    };
    if let Some(root) = &global.data_root {
        config.data_root = root.clone();
    }
    if let Some(jobs) = global.jobs {
        config.jobs = jobs;
    }
    if let Some(v) = global.sync_tolerance_ms {
        config.sync.tolerance_ms = v;
    }
    if let Some(v) = global.sync_min_fraction {
        config.sync.min_match_fraction = v;
    }
    if let Some(v) = global.max_shift_ms {
        config.sync.max_shift_ms = v;
    }
    if let Some(v) = global.shift_step_ms {
        config.sync.shift_step_ms = v;
    }
    if global.no_shift {
        config.search.shifting = false;
    }
    config.validate()?;
    Ok(config)
}

fn run_id(seed: Option<u64>) -> String {
    let millis = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let mut rng = match seed {
        Some(s) => rand::rngs::StdRng::seed_from_u64(s),
        None => rand::rngs::StdRng::from_entropy(),
    };
    format!("{millis}-{:08x}", rng.gen::<u32>())
}

fn run(cli: Cli) -> Result<Outcome> {
    let langs = cli.command.langs().clone();
    if langs.src == langs.dst {
        return Err(usage("source and target languages must differ"));
    }
    let config = load_config(&cli.global, &cli.command)?;
    let store = Store::open(&config.data_root, &langs.src, &langs.dst)?;
    let ctx = Ctx {
        config,
        langs,
        store,
        run_id: run_id(cli.global.seed),
        porcelain: cli.global.porcelain,
    };
    log::info!("run {} on {}", ctx.run_id, ctx.store.dir().display());

    match &cli.command {
        Command::Init { catalog, .. } => init(&ctx, catalog.as_deref()).map(|_| Outcome::Complete),
        Command::Filter { catalog, .. } => filter(&ctx, catalog.as_deref()).map(|_| Outcome::Complete),
        Command::Fetch { limit, .. } => fetch(&ctx, *limit),
        Command::Dialogues { .. } => dialogues(&ctx).map(|_| Outcome::Complete),
        Command::Match { .. } => sentences(&ctx).map(|_| Outcome::Complete),
        Command::Generate { .. } => generate(&ctx).map(|_| Outcome::Complete),
        Command::Stats { .. } => stats(&ctx).map(|_| Outcome::Complete),
        Command::Run { catalog, limit, .. } => {
            init(&ctx, catalog.as_deref())?;
            filter(&ctx, None)?;
            let outcome = fetch(&ctx, *limit)?;
            dialogues(&ctx)?;
            sentences(&ctx)?;
            generate(&ctx)?;
            Ok(outcome)
        }
    }
}

fn init(ctx: &Ctx, catalog: Option<&Path>) -> Result<()> {
    let Some(path) = catalog.or(ctx.config.catalog.as_deref()) else {
        return Err(usage("no catalog given (--catalog or `catalog` in the configuration)"));
    };
    let summary = pipeline::init_catalog(&ctx.store, path, &ctx.config.catalog_mapping, &ctx.run_id)?;
    ctx.summary("init", &summary, || {
        format!("loaded {} catalog records ({} skipped)", summary.records, summary.skipped)
    });
    Ok(())
}

fn filter_stages(ctx: &Ctx, catalog: Option<&Path>) -> Result<Vec<FilterStage>> {
    match catalog {
        Some(path) => {
            let loaded = load_catalog(path, &ctx.config.catalog_mapping)?;
            Ok(filter_report(&loaded.records, &ctx.config.filter))
        }
        None => Ok(pipeline::filtered_movies(&ctx.store, &ctx.config.filter)?.1),
    }
}

fn filter(ctx: &Ctx, catalog: Option<&Path>) -> Result<()> {
    let stages = filter_stages(ctx, catalog)?;
    ctx.summary("filter", &serde_json::json!({ "stages": stages }), || render_filter_table(&stages));
    Ok(())
}

fn fetch(ctx: &Ctx, limit: Option<usize>) -> Result<Outcome> {
    let (movies, _) = pipeline::filtered_movies(&ctx.store, &ctx.config.filter)?;
    if movies.is_empty() {
        ctx.summary("fetch", &pipeline::FetchSummary::default(), || "found 0 pairs of 0 videos".into());
        return Ok(Outcome::Complete);
    }
    let provider = ctx.config.build_provider()?;
    let options = FetchOptions {
        jobs: ctx.config.jobs,
        limit,
        search: ctx.config.search_options(),
    };
    let summary = pipeline::fetch_pairs(
        &ctx.store,
        &movies,
        &ctx.langs.src,
        &ctx.langs.dst,
        provider.as_ref(),
        &ctx.config.sync,
        &options,
        &ctx.run_id,
    )?;
    ctx.summary("fetch", &summary, || {
        let mut line = format!("found {} pairs of {} videos", summary.pairs_total, summary.videos);
        if summary.resumed > 0 {
            line += &format!(" ({} already searched)", summary.resumed);
        }
        if summary.failed > 0 {
            line += &format!("; {} videos failed", summary.failed);
        }
        line
    });
    Ok(if summary.failed > 0 { Outcome::Partial } else { Outcome::Complete })
}

fn dialogues(ctx: &Ctx) -> Result<()> {
    let cleaner = ctx.config.cleaner()?;
    let count = pipeline::build_dialogues(&ctx.store, &cleaner, ctx.config.sync.tolerance_ms, &ctx.run_id)?;
    ctx.summary("dialogues", &serde_json::json!({ "dialogues": count }), || format!("extracted {count} dialogue pairs"));
    Ok(())
}

fn sentences(ctx: &Ctx) -> Result<()> {
    let count = pipeline::build_sentences(&ctx.store, &ctx.config.sentences, &ctx.run_id)?;
    ctx.summary("match", &serde_json::json!({ "sentence_pairs": count }), || format!("matched {count} sentence pairs"));
    Ok(())
}

/// Filter counts for the report, when a catalog is stored.
fn stored_filter(ctx: &Ctx) -> Result<Option<Vec<FilterStage>>> {
    if ctx.store.count(Stage::Catalog)? == 0 {
        return Ok(None);
    }
    Ok(Some(filter_stages(ctx, None)?))
}

fn generate(ctx: &Ctx) -> Result<()> {
    let output = ctx.config.corpus_output(ctx.store.dir());
    let generated = pipeline::generate(
        &ctx.store,
        &ctx.langs.src,
        &ctx.langs.dst,
        &output,
        ctx.config.emit_options(),
        stored_filter(ctx)?,
    )?;
    let c = generated.counts;
    ctx.summary("generate", &c, || {
        format!(
            "wrote {} lines to {} ({} dropped)",
            c.emitted_lines,
            generated.files.iter().take(2).map(|p| p.display().to_string()).collect::<Vec<_>>().join(" and "),
            c.dropped
        )
    });
    Ok(())
}

fn stats(ctx: &Ctx) -> Result<()> {
    let report = pipeline::stats_report(&ctx.store, ctx.config.emit_options(), stored_filter(ctx)?)?;
    ctx.summary("stats", &report, || report.render_table());
    Ok(())
}
