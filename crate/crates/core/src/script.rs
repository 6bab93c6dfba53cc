//! Answer files: CSV `block_id,number,answer,comment`, one answer per row in
//! the order the questions are presented. Answers are `y`, `n` or `u`.

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::catalog::{Catalog, IndicatorId};
use crate::traversal::{AnswerKey, AnswerValue, Session, TraversalError};

pub const ANSWERS_HEADER: [&str; 4] = ["block_id", "number", "answer", "comment"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptRow {
    pub line: u64,
    pub key: AnswerKey,
    pub value: AnswerValue,
    pub comment: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("line {line}: {reason}")]
    Syntax { line: u64, reason: String },
    #[error("line {line}: {source}")]
    Rejected {
        line: u64,
        #[source]
        source: TraversalError,
    },
}

impl ScriptError {
    pub fn line(&self) -> u64 {
        match self {
            ScriptError::Syntax { line, .. } | ScriptError::Rejected { line, .. } => *line,
        }
    }
}

pub fn parse_answers(text: &str) -> Result<Vec<ScriptRow>, ScriptError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = reader.records();
    let syntax = |line, reason: String| ScriptError::Syntax { line, reason };
    match records.next() {
        Some(Ok(h)) if h.iter().map(str::trim).eq(ANSWERS_HEADER) => {}
        Some(Err(e)) => return Err(syntax(1, e.to_string())),
        _ => return Err(syntax(1, format!("header must be `{}`", ANSWERS_HEADER.join(",")))),
    }
    let mut rows = Vec::new();
    for record in records {
        let record = record.map_err(|e| syntax(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        if record.len() < 3 || record.len() > 4 {
            return Err(syntax(line, format!("expected 3 or 4 fields, found {}", record.len())));
        }
        let indicator: IndicatorId =
            record[1].parse().map_err(|e: crate::catalog::IdParseError| syntax(line, e.to_string()))?;
        let value = AnswerValue::from_token(&record[2])
            .ok_or_else(|| syntax(line, format!("answer `{}` is not one of y, n, u", &record[2])))?;
        let comment = record.get(3).filter(|c| !c.is_empty()).map(str::to_string);
        rows.push(ScriptRow { line, key: AnswerKey::new(record[0].trim(), indicator), value, comment });
    }
    Ok(rows)
}

/// Feeds rows to the session exactly as interactive entry would.
/// `clock` supplies one timestamp per submitted answer.
pub fn apply_answers(
    catalog: &Catalog,
    session: &mut Session,
    rows: &[ScriptRow],
    mut clock: impl FnMut() -> DateTime<Utc>,
) -> Result<(), ScriptError> {
    for row in rows {
        session
            .submit_answer(catalog, &row.key, row.value, row.comment.clone(), clock())
            .map_err(|source| ScriptError::Rejected { line: row.line, source })?;
    }
    Ok(())
}

/// Renders rows back to the answers-file format.
pub fn render_answers(session: &Session) -> String {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    writer.write_record(ANSWERS_HEADER).expect("in-memory write");
    for record in &session.answers {
        let number = record.key.indicator.to_string();
        writer
            .write_record([
                record.key.block_id.as_str(),
                number.as_str(),
                record.value.token(),
                record.comment.as_deref().unwrap_or(""),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8")
}
