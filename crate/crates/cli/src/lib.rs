//! `erl`: lint catalogs, run evaluation sessions, report and compare.
//!
//! Exit codes: 0 success, 1 lint errors (or warnings with `--strict`),
//! 2 usage error, 3 runtime or storage failure.

pub mod config;
pub mod render;
mod session;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use erl_core::catalog::{lint_sources, load_catalog, BlockSource, CatalogError, CatalogManifest};
use erl_core::scoring::{block_scores_csv, breakdown, contributions_csv, score_session};
use erl_core::store::{Store, StoreError, Timeline};
use erl_core::traversal::TraversalError;
use erl_core::{Catalog, Score, ScoreReport, ScoringConfig, Session};
use erl_service::{Clock, ServeConfig, ServiceOptions};

use config::{Overrides, Settings};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    /// Lint findings already printed.
    Lint,
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Lint => 1,
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(format!("i/o error: {e}"))
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        use StoreError::*;
        match e {
            Io { .. } | Corrupt { .. } | Locked(_) | ReportMismatch | Traversal(TraversalError::Replay { .. }) => {
                Failure::Runtime(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<CatalogError> for Failure {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<TraversalError> for Failure {
    fn from(e: TraversalError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<erl_core::scoring::ScoringError> for Failure {
    fn from(e: erl_core::scoring::ScoringError) -> Self {
        Failure::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "erl", version, about = "Ethics readiness level evaluations")]
struct Cli {
    /// TOML config file.
    #[arg(long, env = "ERL_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// Session store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Catalog manifest (repeatable).
    #[arg(long = "catalog", global = true)]
    catalogs: Vec<PathBuf>,
    /// Scoring mode: global_sum or block_min.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Pin the clock (RFC 3339), for reproducible runs.
    #[arg(long, env = "ERL_NOW", global = true)]
    now: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check catalog block files or manifests.
    Lint(LintArgs),
    /// Run, resume or replay an evaluation session.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Score a stored session.
    Score(ScoreArgs),
    /// Timeline and latest breakdown for a use case.
    Report(ReportArgs),
    /// Differences between two sessions of one use case.
    Compare(CompareArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct LintArgs {
    /// Block CSV files or catalog manifests (.json). Defaults to the configured catalogs.
    paths: Vec<PathBuf>,
    /// Fail on warnings too.
    #[arg(long)]
    strict: bool,
    /// Allowed |residual| for ZERO_SUM, e.g. 0.010.
    #[arg(long)]
    tolerance: Option<String>,
    #[arg(long, value_enum, default_value_t = LintFormat::Text)]
    format: LintFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LintFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum SessionCommand {
    /// Start a session and answer questions interactively.
    New(NewArgs),
    /// Continue a stored draft interactively.
    Resume { session_id: String },
    /// Feed an answers file (`block_id,number,answer,comment`).
    Replay {
        answers: PathBuf,
        #[command(flatten)]
        new: NewArgs,
    },
}

#[derive(Debug, Clone, Args)]
struct NewArgs {
    #[arg(long)]
    use_case: String,
    /// Comma-separated block ids, in the order to visit them.
    #[arg(long, value_delimiter = ',', required = true)]
    blocks: Vec<String>,
    /// Catalog id, when more than one catalog is configured.
    #[arg(long)]
    catalog_id: Option<String>,
    /// Session date (YYYY-MM-DD); defaults to today.
    #[arg(long)]
    date: Option<NaiveDate>,
    #[arg(long)]
    title: Option<String>,
    /// Participant name (repeatable).
    #[arg(long = "participant")]
    participants: Vec<String>,
    #[arg(long)]
    trl: Option<String>,
    #[arg(long)]
    notes: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
    Md,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreTable {
    Blocks,
    Contributions,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    session_id: String,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Table for CSV output.
    #[arg(long, value_enum, default_value_t = ScoreTable::Blocks)]
    table: ScoreTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportTable {
    Timeline,
    Blocks,
    Contributions,
}

#[derive(Debug, Args)]
struct ReportArgs {
    use_case: String,
    #[arg(long, value_enum, default_value_t = Format::Md)]
    format: Format,
    /// Table for CSV output.
    #[arg(long, value_enum, default_value_t = ReportTable::Timeline)]
    table: ReportTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CompareTable {
    Blocks,
    Answers,
    Contributions,
}

#[derive(Debug, Args)]
struct CompareArgs {
    from: String,
    to: String,
    #[arg(long, value_enum, default_value_t = Format::Md)]
    format: Format,
    /// Table for CSV output.
    #[arg(long, value_enum, default_value_t = CompareTable::Blocks)]
    table: CompareTable,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Listen address; overrides the config file.
    #[arg(long)]
    bind: Option<std::net::SocketAddr>,
    /// Require `Authorization: Bearer <token>`.
    #[arg(long, env = "ERL_TOKEN")]
    token: Option<String>,
}

/// Shared state for one command invocation.
struct Context {
    settings: Settings,
    clock: Clock,
}

impl Context {
    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    fn catalogs(&self) -> Result<Vec<Arc<Catalog>>, Failure> {
        if self.settings.catalogs.is_empty() {
            return Err(Failure::Usage("no catalog configured (use --catalog or a config file)".into()));
        }
        self.settings.catalogs.iter().map(|p| load_catalog(p).map(Arc::new).map_err(Failure::from)).collect()
    }

    fn open_store(&self) -> Result<Store, Failure> {
        let root = self.settings.store_path()?.to_path_buf();
        Ok(Store::open(root, self.catalogs()?)?)
    }

    /// Scoring configuration for a use case: the stored one, unless a flag overrides the mode.
    fn config_for(&self, store: &Store, use_case_id: &str) -> Result<ScoringConfig, Failure> {
        let mut config = match store.use_case(use_case_id) {
            Ok(record) => record.config,
            Err(StoreError::UnknownUseCase(_)) => ScoringConfig::with_mode(self.settings.mode),
            Err(e) => return Err(e.into()),
        };
        if let Some(mode) = self.settings.mode_flag {
            config.mode = mode;
        }
        Ok(config)
    }

    /// A stored session with its catalog and scoring configuration.
    fn load(&self, store: &Store, session_id: &str) -> Result<(Arc<Catalog>, Session, ScoringConfig), Failure> {
        let record = store.locate_session(session_id)?;
        let session = store.load_session(&record.use_case_id, session_id)?;
        let catalog = store.catalog(&session.catalog_ref)?.clone();
        let config = self.config_for(store, &record.use_case_id)?;
        Ok((catalog, session, config))
    }
}

fn parse_now(text: &str) -> Result<DateTime<Utc>, Failure> {
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Failure::Usage(format!("invalid --now `{text}`: {e}")))
}

/// Runs the CLI. Prompts and results go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(cli, input, out) {
        Ok(()) => 0,
        Err(failure) => {
            match &failure {
                Failure::Lint => {}
                Failure::Usage(m) | Failure::Runtime(m) => {
                    let _ = writeln!(err, "erl: {m}");
                }
            }
            let _ = out.flush();
            failure.exit_code()
        }
    }
}

fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), Failure> {
    let settings = Settings::resolve(Overrides {
        config: cli.config.as_deref(),
        store: cli.store.as_deref(),
        catalogs: &cli.catalogs,
        mode: cli.mode.as_deref(),
    })?;
    let clock: Clock = match cli.now.as_deref().map(parse_now).transpose()? {
        Some(at) => Arc::new(move || at),
        None => Arc::new(Utc::now),
    };
    let ctx = Context { settings, clock };
    match cli.command {
        Command::Lint(args) => cmd_lint(&ctx, args, out),
        Command::Session(SessionCommand::New(args)) => session::new(&ctx, &args, input, out),
        Command::Session(SessionCommand::Resume { session_id }) => session::resume(&ctx, &session_id, input, out),
        Command::Session(SessionCommand::Replay { answers, new }) => session::replay(&ctx, &answers, &new, out),
        Command::Score(args) => cmd_score(&ctx, args, out),
        Command::Report(args) => cmd_report(&ctx, args, out),
        Command::Compare(args) => cmd_compare(&ctx, args, out),
        Command::Serve(args) => cmd_serve(ctx, args, out),
    }
}

fn lint_inputs(path: &Path) -> Result<Vec<BlockSource>, Failure> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(CatalogManifest::read(path)?.read_sources(path)?);
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(vec![BlockSource::new(stem.clone(), stem, text)])
}

fn cmd_lint(ctx: &Context, args: LintArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let paths = if args.paths.is_empty() { ctx.settings.catalogs.clone() } else { args.paths };
    if paths.is_empty() {
        return Err(Failure::Usage("nothing to lint (give block files or configure a catalog)".into()));
    }
    let tolerance = match &args.tolerance {
        Some(t) => Score::parse_lenient(t).map_err(|e| Failure::Usage(format!("invalid --tolerance `{t}`: {e}")))?,
        None => ctx.settings.lint_tolerance,
    };
    let mut sources = Vec::new();
    for path in &paths {
        sources.extend(lint_inputs(path)?);
    }
    let report = lint_sources(&sources, tolerance);
    match args.format {
        LintFormat::Text => {
            for finding in &report.findings {
                writeln!(out, "{finding}")?;
            }
            writeln!(
                out,
                "{} indicators, {} errors, {} warnings",
                report.indicator_count,
                report.errors().count(),
                report.warnings().count()
            )?;
        }
        LintFormat::Json => writeln!(out, "{}", to_json(&report))?,
    }
    if report.has_errors() || (args.strict && report.has_warnings()) {
        return Err(Failure::Lint);
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn cmd_score(ctx: &Context, args: ScoreArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let store = ctx.open_store()?;
    let (catalog, session, config) = ctx.load(&store, &args.session_id)?;
    let report = score_session(&catalog, &session, &config)?;
    let text = match args.format {
        Format::Text => render::score_text(&catalog, &session, &report),
        Format::Md => render::score_markdown(&catalog, &session, &report),
        Format::Json => to_json(&report) + "\n",
        Format::Csv => match args.table {
            ScoreTable::Blocks => block_scores_csv(&report.block_scores),
            ScoreTable::Contributions => contributions_csv(&breakdown(&report)),
        },
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_report(ctx: &Context, args: ReportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let store = ctx.open_store()?;
    let record = match store.use_case(&args.use_case) {
        Ok(record) => Some(record),
        Err(StoreError::UnknownUseCase(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let timeline = match &record {
        Some(_) => store.timeline(&args.use_case)?,
        None => Timeline { use_case_id: args.use_case.clone(), points: Vec::new() },
    };
    let latest = match timeline.points.iter().rev().find(|p| p.complete) {
        Some(point) => {
            let (catalog, session, config) = ctx.load(&store, &point.session_id)?;
            let report = score_session(&catalog, &session, &config)?;
            Some((catalog, session, report))
        }
        None => None,
    };
    let latest_report: Option<&ScoreReport> = latest.as_ref().map(|(_, _, r)| r);
    let text = match args.format {
        Format::Json => {
            let value = serde_json::json!({ "timeline": timeline, "latest_complete": latest_report });
            to_json(&value) + "\n"
        }
        Format::Csv => match args.table {
            ReportTable::Timeline => render::timeline_csv(&timeline),
            ReportTable::Blocks => block_scores_csv(latest_report.map_or(&[][..], |r| &r.block_scores)),
            ReportTable::Contributions => contributions_csv(&latest_report.map(breakdown).unwrap_or_default()),
        },
        Format::Md | Format::Text => {
            let mut text = render::timeline_markdown(record.as_ref(), &timeline);
            if let Some((catalog, session, report)) = &latest {
                text.push('\n');
                text.push_str(&render::score_markdown(catalog, session, report));
            }
            text
        }
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_compare(ctx: &Context, args: CompareArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let store = ctx.open_store()?;
    let diff = store.diff_sessions(&args.from, &args.to)?;
    let text = match args.format {
        Format::Json => to_json(&diff) + "\n",
        Format::Csv => match args.table {
            CompareTable::Blocks => render::diff_blocks_csv(&diff),
            CompareTable::Answers => render::diff_answers_csv(&diff),
            CompareTable::Contributions => render::diff_contributions_csv(&diff),
        },
        Format::Md | Format::Text => {
            let (catalog, _, _) = ctx.load(&store, &args.to)?;
            render::diff_markdown(&catalog, &diff)
        }
    };
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_serve(ctx: Context, args: ServeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let settings = ctx.settings;
    if settings.catalogs.is_empty() {
        return Err(Failure::Usage("no catalog configured (use --catalog or a config file)".into()));
    }
    let config = ServeConfig {
        bind: args.bind.unwrap_or(settings.bind),
        store: settings.store_path()?.to_path_buf(),
        catalogs: settings.catalogs.clone(),
        options: ServiceOptions {
            scoring: ScoringConfig::with_mode(settings.mode),
            lint_tolerance: settings.lint_tolerance,
            token: args.token.or(settings.token.clone()),
            clock: ctx.clock,
        },
    };
    erl_service::serve_blocking(config, |addr| {
        let _ = writeln!(out, "listening on http://{addr}/v1");
        let _ = out.flush();
    })
    .map_err(|e| Failure::Runtime(e.to_string()))
}
