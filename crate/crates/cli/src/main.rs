use std::collections::BTreeMap;
use std::fs;
use std::io::{self, IsTerminal, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stele_cli::failure::{Classify, Failure, Outcome};
use stele_cli::manifest::Manifest;
use stele_cli::pipeline::{self, BuildOptions};
use stele_cli::report::Report;
use stele_core::corpus::{ingest_authors, ingest_posts_at, PostFormat};
use stele_core::monument::{
    build_scene, check_scene, height_lower, height_upper, HeightParams, MonumentInputs, SceneConfig, SceneDocument,
};
use stele_core::salience::{retain_top, salience_scores, SalienceParams};
use stele_core::textfeat::{KeywordSet, Segment};
use stele_service::config::ServiceConfig;
use stele_service::ServiceError;

#[derive(Parser)]
#[command(
    name = "stele",
    version,
    about = "Build and serve commemorative monument scenes from mourning-post corpora"
)]
struct Cli {
    /// Pipeline manifest (TOML).
    #[arg(long, global = true, env = "STELE_MANIFEST")]
    manifest: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    log_format: LogFormat,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Read and filter every campaign; writes filtered/<author>.jsonl.
    Ingest(OutArg),
    /// Score and retain posts; writes retained/<author>.jsonl.
    Score(ScoreArgs),
    /// Extract keyword sets; writes keywords/<author>.<segment>.json.
    Keywords(OutArg),
    /// Run the full pipeline and write the scene, keywords, curated posts and report.
    Build(BuildArgs),
    /// Print per-author stage counts, top keywords and heights.
    Report(ReportArgs),
    /// Standardized metrics and heights for an authors file.
    Analyze(AnalyzeArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Export a scene as PLY points or JSON.
    Export(ExportArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output directory; defaults to the manifest's [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Score a single post file instead of the manifest's campaigns.
    #[arg(long)]
    posts: Option<PathBuf>,
    #[arg(long)]
    half_life: Option<f64>,
    /// Repost, comment and like weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    percentile: Option<f64>,
    /// Output directory, or a file when --posts is given.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    percentile: Option<f64>,
    /// Previous scene; lower segments of unchanged authors are kept as they were.
    #[arg(long)]
    previous: Option<PathBuf>,
    #[arg(long)]
    data_version: Option<u64>,
    /// Build from an authors CSV and a keyword directory without a manifest.
    #[arg(long, requires = "keywords")]
    authors: Option<PathBuf>,
    #[arg(long, requires = "authors")]
    keywords: Option<PathBuf>,
    /// Scene timestamp for --authors builds.
    #[arg(long)]
    built_at: Option<DateTime<Utc>>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    json: bool,
    #[arg(long)]
    percentile: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Authors CSV; defaults to the manifest's.
    #[arg(long)]
    authors: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured bind address and STELE_BIND.
    #[arg(long)]
    bind: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Ply,
    Json,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportFormat::Ply)]
    format: ExportFormat,
    /// Export one monument only.
    #[arg(long)]
    author: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}

fn init_logging(cli: &Cli) {
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into());
    // The service's request log goes to stdout; pipeline diagnostics to stderr.
    let to_stdout = matches!(cli.command, Command::Serve(_));
    let ansi = if to_stdout {
        io::stdout().is_terminal()
    } else {
        io::stderr().is_terminal()
    };
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_ansi(ansi);
    match (cli.log_format, to_stdout) {
        (LogFormat::Text, true) => builder.with_writer(io::stdout).init(),
        (LogFormat::Text, false) => builder.with_writer(io::stderr).init(),
        (LogFormat::Json, true) => builder.json().with_writer(io::stdout).init(),
        (LogFormat::Json, false) => builder.json().with_writer(io::stderr).init(),
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let manifest = || -> Outcome<Manifest> {
        let path = cli
            .manifest
            .as_deref()
            .ok_or_else(|| Failure::config(anyhow!("--manifest (or STELE_MANIFEST) is required")))?;
        Manifest::load(path)
    };
    match cli.command {
        Command::Ingest(args) => {
            let m = manifest()?;
            let campaigns = pipeline::ingest(&m, Utc::now())?;
            let out = args.out.unwrap_or_else(|| m.output.dir.clone());
            pipeline::write_staged(&out, |dir| pipeline::write_filtered(dir, &campaigns))?;
            for c in &campaigns {
                tracing::info!(author = %c.author.author_id, ingested = c.ingested, kept = c.filter.kept.len(), "ingested");
            }
            Ok(())
        }
        Command::Score(args) => score(args, manifest),
        Command::Keywords(args) => {
            let m = manifest()?;
            let mut campaigns = pipeline::ingest(&m, Utc::now())?;
            pipeline::score(&m, &mut campaigns)?;
            let tokenizer = pipeline::tokenizer(&m)?;
            let keywords = pipeline::keywords(&m, &campaigns, &tokenizer)?;
            let out = args.out.unwrap_or_else(|| m.output.dir.clone());
            pipeline::write_staged(&out, |dir| pipeline::write_keywords(dir, &keywords))?;
            Ok(())
        }
        Command::Build(args) if args.authors.is_some() => standalone_build(args),
        Command::Build(args) => {
            let mut m = manifest()?;
            if let Some(d) = args.density {
                m.scene.density = d;
            }
            if let Some(s) = args.seed {
                m.scene.seed = s;
            }
            if let Some(k) = args.top_k {
                m.keywords.top_k = k;
            }
            if let Some(p) = args.percentile {
                m.salience.retain_percentile = p;
            }
            m.validate()?;
            let previous = args
                .previous
                .as_deref()
                .map(|p| SceneDocument::read(p).or_data(|| format!("previous scene {}", p.display())))
                .transpose()?;
            let options = BuildOptions {
                previous: previous.as_ref(),
                data_version: args.data_version,
                ..Default::default()
            };
            let build = pipeline::run(&m, &options)?;
            let report = Report::new(&build.campaigns, Some(&build.keywords), Some(&build.scene))?;
            let out = args.out.unwrap_or_else(|| m.output.dir.clone());
            let written = pipeline::write_staged(&out, |dir| pipeline::write_build(dir, &build, &report))?;
            print!("{}", report.render());
            tracing::info!(
                monuments = build.scene.monuments.len(),
                data_version = build.scene.data_version,
                files = written.len(),
                out = %out.display(),
                "build complete"
            );
            Ok(())
        }
        Command::Report(args) => {
            let mut m = manifest()?;
            if let Some(p) = args.percentile {
                m.salience.retain_percentile = p;
            }
            m.validate()?;
            let build = pipeline::run(&m, &BuildOptions::default())?;
            let report = Report::new(&build.campaigns, Some(&build.keywords), Some(&build.scene))?;
            print!("{}", if args.json { report.to_json() } else { report.render() });
            Ok(())
        }
        Command::Analyze(args) => {
            let (path, heights) = match args.authors {
                Some(p) => (p, HeightParams::default()),
                None => {
                    let m = manifest()?;
                    (m.inputs.authors, m.heights)
                }
            };
            analyze(&path, &heights)
        }
        Command::Serve(args) => serve(args),
        Command::Export(args) => export(args),
    }
}

fn score(args: ScoreArgs, manifest: impl FnOnce() -> Outcome<Manifest>) -> Outcome<()> {
    let Some(posts_path) = args.posts else {
        let mut m = manifest()?;
        apply_salience_overrides(
            &mut m.salience,
            args.half_life,
            args.weights.as_deref(),
            args.percentile,
        )?;
        m.validate()?;
        let mut campaigns = pipeline::ingest(&m, Utc::now())?;
        pipeline::score(&m, &mut campaigns)?;
        let out = args.out.unwrap_or_else(|| m.output.dir.clone());
        pipeline::write_staged(&out, |dir| pipeline::write_retained(dir, &campaigns))?;
        return Ok(());
    };
    let mut params = SalienceParams::default();
    apply_salience_overrides(&mut params, args.half_life, args.weights.as_deref(), args.percentile)?;
    params.validate().or_config(|| "salience parameters".into())?;
    let format = PostFormat::from_path(&posts_path)
        .ok_or_else(|| Failure::config(anyhow!("{}: expected a .jsonl or .csv post file", posts_path.display())))?;
    let posts = ingest_posts_at(&posts_path, format, Utc::now()).or_data(|| posts_path.display().to_string())?;
    let retained = if posts.is_empty() {
        Vec::new()
    } else {
        retain_top(&salience_scores(&posts, &params).or_data(|| "scoring".into())?, &params)
    };
    match args.out {
        Some(out) => pipeline::write_scored(&out, &retained),
        None => {
            let mut stdout = io::stdout().lock();
            for s in &retained {
                let line = stele_core::canonical::to_string(s);
                writeln!(stdout, "{line}").or_data(|| "stdout".into())?;
            }
            Ok(())
        }
    }
}

fn apply_salience_overrides(
    params: &mut SalienceParams,
    half_life: Option<f64>,
    weights: Option<&[f64]>,
    percentile: Option<f64>,
) -> Outcome<()> {
    if let Some(h) = half_life {
        params.half_life_days = h;
    }
    match weights {
        None => {}
        Some([r, c, l]) => {
            params.w_repost = *r;
            params.w_comment = *c;
            params.w_like = *l;
        }
        Some(other) => {
            return Err(Failure::config(anyhow!(
                "--weights takes three values, got {}",
                other.len()
            )));
        }
    }
    if let Some(p) = percentile {
        params.retain_percentile = p;
    }
    Ok(())
}

fn standalone_build(args: BuildArgs) -> Outcome<()> {
    let (Some(authors_path), Some(keyword_dir)) = (args.authors, args.keywords) else {
        unreachable!("clap enforces --authors with --keywords");
    };
    let out = args
        .out
        .ok_or_else(|| Failure::config(anyhow!("--out <scene.json> is required with --authors")))?;
    let mut config = SceneConfig::default();
    if let Some(d) = args.density {
        config.density = d;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate().or_config(|| "scene parameters".into())?;
    if !keyword_dir.is_dir() {
        return Err(Failure::config(anyhow!(
            "missing keyword directory: {}",
            keyword_dir.display()
        )));
    }
    let authors = ingest_authors(&authors_path).or_data(|| "authors".into())?;
    let mut inputs = MonumentInputs {
        authors,
        ..Default::default()
    };
    for ((author, segment), set) in KeywordSet::read_dir(&keyword_dir).or_data(|| "keyword sets".into())? {
        match segment {
            Segment::Lower => inputs.keywords_lower.insert(author, set),
            Segment::Upper => inputs.keywords_upper.insert(author, set),
        };
    }
    let built_at = args.built_at.unwrap_or(DateTime::UNIX_EPOCH);
    let scene = build_scene(
        &inputs,
        &HeightParams::default(),
        &config,
        built_at,
        args.data_version.unwrap_or(1),
    )
    .or_data(|| "scene synthesis".into())?;
    check_scene(&scene).map_err(|e| Failure::data(anyhow!("scene failed validation: {e}")))?;
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = out
        .file_name()
        .ok_or_else(|| Failure::config(anyhow!("--out must name a file")))?
        .to_owned();
    pipeline::write_staged(dir, |staging| {
        let path = staging.join(&name);
        fs::write(&path, scene.to_canonical_json()).or_data(|| path.display().to_string())
    })?;
    tracing::info!(monuments = scene.monuments.len(), out = %out.display(), "scene written");
    Ok(())
}

fn analyze(path: &Path, params: &HeightParams) -> Outcome<()> {
    params
        .compression
        .validate()
        .or_config(|| "[heights.compression]".into())?;
    let authors = ingest_authors(path).or_data(|| "authors".into())?;
    if authors.is_empty() {
        println!("no authors");
        return Ok(());
    }
    let counts: Vec<u32> = authors.iter().map(|a| a.publication_count).collect();
    let lower =
        height_lower(&counts, &params.weights, params.compression.k_productivity).or_data(|| "lower heights".into())?;
    let upper =
        height_upper(&authors, &params.weights, params.compression.k_attention).or_data(|| "upper heights".into())?;
    println!(
        "{:<14} {:>12} {:>10} {:>10}",
        "author", "publications", "lower", "upper"
    );
    let rows: BTreeMap<_, _> = authors
        .iter()
        .enumerate()
        .map(|(i, a)| ((a.death_date, &a.author_id), i))
        .collect();
    for ((_, id), i) in rows {
        println!("{id:<14} {:>12} {:>10.4} {:>10.4}", counts[i], lower[i], upper[i]);
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Outcome<()> {
    let mut config = ServiceConfig::load(&args.config).map_err(service_failure)?;
    config.apply_env();
    if let Some(bind) = args.bind {
        config.bind = bind;
    }
    config.validate().map_err(service_failure)?;
    let runtime = tokio::runtime::Runtime::new().or_data(|| "tokio runtime".into())?;
    runtime
        .block_on(stele_service::serve(config, shutdown_signal()))
        .map_err(service_failure)
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn service_failure(e: ServiceError) -> Failure {
    match e {
        ServiceError::Config(_) => Failure::config(e),
        other => Failure::data(other),
    }
}

fn export(args: ExportArgs) -> Outcome<()> {
    let mut scene = SceneDocument::read(&args.scene).or_data(|| format!("scene {}", args.scene.display()))?;
    if let Some(author) = &args.author {
        let index = scene
            .monuments
            .iter()
            .position(|m| &m.spec.author_id == author)
            .ok_or_else(|| Failure::data(anyhow!("no monument for {author:?} in {}", args.scene.display())))?;
        scene.layout = vec![scene.layout.swap_remove(index)];
        scene.monuments = vec![scene.monuments.swap_remove(index)];
    }
    let mut body = Vec::new();
    match args.format {
        ExportFormat::Ply => scene.write_ply(&mut body).or_data(|| "ply".into())?,
        ExportFormat::Json => body = scene.to_canonical_json(),
    }
    match args.out {
        Some(path) => fs::write(&path, body).or_data(|| format!("writing {}", path.display())),
        None => io::stdout().lock().write_all(&body).or_data(|| "stdout".into()),
    }
}
