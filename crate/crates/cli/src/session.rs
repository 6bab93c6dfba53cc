//! `erl session new|resume|replay`.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use erl_core::scoring::score_session;
use erl_core::script::{apply_answers, parse_answers};
use erl_core::store::Store;
use erl_core::traversal::Question;
use erl_core::{AnswerValue, Catalog, ScoringConfig, Session, SessionMetadata};

use crate::{render, Context, Failure, NewArgs};

fn pick_catalog(store: &Store, ctx: &Context, wanted: Option<&str>) -> Result<Arc<Catalog>, Failure> {
    let catalogs = ctx.catalogs()?;
    let found = match wanted {
        Some(id) => catalogs.iter().find(|c| c.catalog_id == id),
        None if catalogs.len() == 1 => catalogs.first(),
        None => return Err(Failure::Usage("several catalogs are configured; choose one with --catalog-id".into())),
    };
    let catalog =
        found.ok_or_else(|| Failure::Usage(format!("catalog `{}` is not configured", wanted.unwrap_or(""))))?;
    Ok(store.catalog(&catalog.reference())?.clone())
}

fn start(ctx: &Context, store: &Store, args: &NewArgs) -> Result<(Arc<Catalog>, Session, ScoringConfig), Failure> {
    let catalog = pick_catalog(store, ctx, args.catalog_id.as_deref())?;
    let now = ctx.now();
    let mut metadata = SessionMetadata::new(&args.use_case, args.date.unwrap_or_else(|| now.date_naive()));
    metadata.title = args.title.clone().unwrap_or_default();
    metadata.participants = args.participants.clone();
    metadata.trl = args.trl.clone();
    metadata.notes = args.notes.clone().unwrap_or_default();
    let session = Session::start(&catalog, args.blocks.clone(), metadata, now)?;
    let config = ctx.config_for(store, &args.use_case)?;
    Ok((catalog, session, config))
}

fn persist(store: &Store, catalog: &Catalog, session: &Session, config: &ScoringConfig) -> Result<(), Failure> {
    let use_case = &session.metadata.use_case_id;
    if session.is_complete() {
        let report = score_session(catalog, session, config)?;
        store.save_session(use_case, session, &report, config)?;
    } else {
        store.save_draft(use_case, session, config)?;
    }
    Ok(())
}

fn finish(catalog: &Catalog, session: &Session, config: &ScoringConfig, out: &mut dyn Write) -> Result<(), Failure> {
    if session.is_complete() {
        let report = score_session(catalog, session, config)?;
        out.write_all(render::score_text(catalog, session, &report).as_bytes())?;
    } else {
        writeln!(out, "Saved draft {0}; continue with `erl session resume {0}`.", session.session_id)?;
    }
    Ok(())
}

/// Reads one line; `None` at end of input.
fn read_line(input: &mut dyn BufRead) -> Result<Option<String>, Failure> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim_end_matches(['\r', '\n']).to_string()))
}

/// Asks questions until the session completes or input stops.
/// The session is saved after every answer.
fn interact(
    ctx: &Context,
    store: &Store,
    catalog: &Catalog,
    session: &mut Session,
    config: &ScoringConfig,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    writeln!(out, "Session {} for use case {}", session.session_id, session.metadata.use_case_id)?;
    while let Question::Ask(key) = session.current_question(catalog) {
        let indicator = catalog.block(&key.block_id).and_then(|b| b.get(&key.indicator)).expect("asked keys exist");
        let progress = session.progress(catalog);
        writeln!(
            out,
            "\n[{} answered, at most {} remaining]",
            progress.answered, progress.reachable_remaining_upper_bound
        )?;
        writeln!(out, "{key} ({}) {}", indicator.layer, indicator.text)?;
        let value = loop {
            write!(out, "answer y/n/u (q to stop): ")?;
            out.flush()?;
            let Some(line) = read_line(input)? else {
                writeln!(out)?;
                return Ok(());
            };
            let token = line.trim();
            if token.eq_ignore_ascii_case("q") {
                writeln!(out)?;
                return Ok(());
            }
            match AnswerValue::from_token(token) {
                Some(value) => break value,
                None => writeln!(out, "please answer y, n or u")?,
            }
        };
        write!(out, "comment (enter to skip): ")?;
        out.flush()?;
        let comment = read_line(input)?.filter(|c| !c.trim().is_empty());
        session.submit_answer(catalog, &key, value, comment, ctx.now())?;
        persist(store, catalog, session, config)?;
    }
    Ok(())
}

pub(crate) fn new(ctx: &Context, args: &NewArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), Failure> {
    let store = ctx.open_store()?;
    let (catalog, mut session, config) = start(ctx, &store, args)?;
    persist(&store, &catalog, &session, &config)?;
    interact(ctx, &store, &catalog, &mut session, &config, input, out)?;
    finish(&catalog, &session, &config, out)
}

pub(crate) fn resume(
    ctx: &Context,
    session_id: &str,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let store = ctx.open_store()?;
    let (catalog, mut session, config) = ctx.load(&store, session_id)?;
    if session.is_complete() {
        return Err(Failure::Usage(format!("session {session_id} is already complete")));
    }
    interact(ctx, &store, &catalog, &mut session, &config, input, out)?;
    finish(&catalog, &session, &config, out)
}

pub(crate) fn replay(ctx: &Context, answers: &Path, args: &NewArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let text = std::fs::read_to_string(answers)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", answers.display())))?;
    let at_line = |line: u64, reason: String| Failure::Usage(format!("{}:{line}: {reason}", answers.display()));
    let rows = parse_answers(&text).map_err(|e| at_line(e.line(), error_reason(&e)))?;
    let store = ctx.open_store()?;
    let (catalog, mut session, config) = start(ctx, &store, args)?;
    apply_answers(&catalog, &mut session, &rows, || ctx.now()).map_err(|e| at_line(e.line(), error_reason(&e)))?;
    persist(&store, &catalog, &session, &config)?;
    finish(&catalog, &session, &config, out)
}

fn error_reason(e: &erl_core::script::ScriptError) -> String {
    use erl_core::script::ScriptError;
    match e {
        ScriptError::Syntax { reason, .. } => reason.clone(),
        ScriptError::Rejected { source, .. } => source.to_string(),
    }
}
