//! Evaluation sessions: a deterministic, event-sourced walk over the selected
//! blocks' indicator trees.
//!
//! Blocks are visited in selection order; within a block, indicators in id
//! order. An indicator is presented only once every ancestor has been
//! answered "yes", so a "no" prunes its whole subtree. Every mutation is
//! recorded as a [`SessionEvent`]; [`Session::replay`] rebuilds the same
//! state from the log.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{Block, Catalog, CatalogRef, IndicatorId};

pub const MAX_COMMENT_CHARS: usize = 4000;
pub const DEFAULT_FOLLOWUP_MONTHS: u32 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
        })
    }
}

/// A yes/no answer. "Unsure" is recorded as "no" with a follow-up flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawAnswer")]
pub struct AnswerValue {
    pub verdict: Verdict,
    pub unsure: bool,
}

#[derive(Deserialize)]
struct RawAnswer {
    verdict: Verdict,
    #[serde(default)]
    unsure: bool,
}

impl TryFrom<RawAnswer> for AnswerValue {
    type Error = TraversalError;

    fn try_from(raw: RawAnswer) -> Result<Self, Self::Error> {
        AnswerValue::new(raw.verdict, raw.unsure)
    }
}

impl AnswerValue {
    pub const YES: AnswerValue = AnswerValue { verdict: Verdict::Yes, unsure: false };
    pub const NO: AnswerValue = AnswerValue { verdict: Verdict::No, unsure: false };
    pub const UNSURE: AnswerValue = AnswerValue { verdict: Verdict::No, unsure: true };

    pub fn new(verdict: Verdict, unsure: bool) -> Result<Self, TraversalError> {
        if unsure && verdict == Verdict::Yes {
            return Err(TraversalError::UnsureYes);
        }
        Ok(AnswerValue { verdict, unsure })
    }

    pub fn is_yes(self) -> bool {
        self.verdict == Verdict::Yes
    }

    /// Parses the `y` / `n` / `u` answer tokens (also `yes`, `no`, `unsure`).
    pub fn from_token(token: &str) -> Option<AnswerValue> {
        match token.trim().to_ascii_lowercase().as_str() {
            "y" | "yes" => Some(AnswerValue::YES),
            "n" | "no" => Some(AnswerValue::NO),
            "u" | "unsure" => Some(AnswerValue::UNSURE),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match (self.verdict, self.unsure) {
            (Verdict::Yes, _) => "y",
            (Verdict::No, false) => "n",
            (Verdict::No, true) => "u",
        }
    }
}

/// An indicator within a specific block.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnswerKey {
    pub block_id: String,
    pub indicator: IndicatorId,
}

impl AnswerKey {
    pub fn new(block_id: impl Into<String>, indicator: IndicatorId) -> Self {
        AnswerKey { block_id: block_id.into(), indicator }
    }
}

impl fmt::Display for AnswerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.block_id, self.indicator)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    #[serde(flatten)]
    pub key: AnswerKey,
    pub value: AnswerValue,
    pub comment: Option<String>,
    pub answered_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMetadata {
    pub use_case_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub participants: Vec<String>,
    #[serde(default)]
    pub trl: Option<String>,
    pub session_date: NaiveDate,
    #[serde(default = "default_followup")]
    pub recommended_followup_months: Option<u32>,
    #[serde(default)]
    pub notes: String,
}

fn default_followup() -> Option<u32> {
    Some(DEFAULT_FOLLOWUP_MONTHS)
}

impl SessionMetadata {
    pub fn new(use_case_id: impl Into<String>, session_date: NaiveDate) -> Self {
        SessionMetadata {
            use_case_id: use_case_id.into(),
            title: String::new(),
            participants: Vec::new(),
            trl: None,
            session_date,
            recommended_followup_months: default_followup(),
            notes: String::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    InProgress,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartPayload {
    pub session_id: String,
    pub catalog_ref: CatalogRef,
    pub selected_blocks: Vec<String>,
    pub metadata: SessionMetadata,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerPayload {
    #[serde(flatten)]
    pub key: AnswerKey,
    pub value: AnswerValue,
    pub comment: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisePayload {
    #[serde(flatten)]
    pub key: AnswerKey,
    pub value: AnswerValue,
    pub comment: Option<String>,
    /// Descendant answers dropped because they became unreachable.
    pub removed: Vec<IndicatorId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletePayload {
    pub answered: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum EventBody {
    Start(StartPayload),
    Answer(AnswerPayload),
    Revise(RevisePayload),
    Complete(CompletePayload),
}

/// One line of the append-only session log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Question {
    Ask(AnswerKey),
    Done,
}

impl Question {
    pub fn key(&self) -> Option<&AnswerKey> {
        match self {
            Question::Ask(k) => Some(k),
            Question::Done => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub answered: usize,
    /// Unanswered indicators not pruned by a "no" so far.
    pub reachable_remaining_upper_bound: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraversalError {
    #[error("no blocks selected")]
    EmptySelection,
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("block `{0}` selected more than once")]
    DuplicateBlock(String),
    #[error("use case id must not be empty")]
    MissingUseCase,
    #[error("session uses catalog {expected}, got {found}")]
    CatalogMismatch { expected: CatalogRef, found: CatalogRef },
    #[error("{got} is not the current question (expected {})", expected.as_ref().map_or("none".to_string(), ToString::to_string))]
    OutOfOrderAnswer { expected: Option<AnswerKey>, got: AnswerKey },
    #[error("session is complete")]
    SessionComplete,
    #[error("unknown indicator {0}")]
    UnknownIndicator(AnswerKey),
    #[error("indicator {0} has not been answered")]
    NeverAnswered(AnswerKey),
    #[error("an unsure answer must be recorded as \"no\"")]
    UnsureYes,
    #[error("comment exceeds {MAX_COMMENT_CHARS} characters")]
    CommentTooLong,
    #[error("event log invalid at seq {seq}: {reason}")]
    Replay { seq: u64, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Session {
    pub session_id: String,
    pub catalog_ref: CatalogRef,
    pub selected_blocks: Vec<String>,
    pub answers: Vec<AnswerRecord>,
    pub metadata: SessionMetadata,
    pub state: SessionState,
    events: Vec<SessionEvent>,
}

/// Default session id: a digest of the start payload and its timestamp.
pub fn derive_session_id(
    catalog_ref: &CatalogRef,
    selected_blocks: &[String],
    metadata: &SessionMetadata,
    at: DateTime<Utc>,
) -> String {
    let mut hasher = Sha256::new();
    let canonical = serde_json::to_vec(&(catalog_ref, selected_blocks, metadata, at)).expect("serializable");
    hasher.update(&canonical);
    format!("s-{}", &hex::encode(hasher.finalize())[..16])
}

impl Session {
    pub fn start(
        catalog: &Catalog,
        selected_blocks: Vec<String>,
        metadata: SessionMetadata,
        at: DateTime<Utc>,
    ) -> Result<Session, TraversalError> {
        let id = derive_session_id(&catalog.reference(), &selected_blocks, &metadata, at);
        Session::start_with_id(catalog, id, selected_blocks, metadata, at)
    }

    pub fn start_with_id(
        catalog: &Catalog,
        session_id: impl Into<String>,
        selected_blocks: Vec<String>,
        metadata: SessionMetadata,
        at: DateTime<Utc>,
    ) -> Result<Session, TraversalError> {
        if selected_blocks.is_empty() {
            return Err(TraversalError::EmptySelection);
        }
        let mut seen = HashSet::new();
        for block in &selected_blocks {
            if catalog.block(block).is_none() {
                return Err(TraversalError::UnknownBlock(block.clone()));
            }
            if !seen.insert(block) {
                return Err(TraversalError::DuplicateBlock(block.clone()));
            }
        }
        if metadata.use_case_id.trim().is_empty() {
            return Err(TraversalError::MissingUseCase);
        }
        let payload =
            StartPayload { session_id: session_id.into(), catalog_ref: catalog.reference(), selected_blocks, metadata };
        let mut session = Session {
            session_id: payload.session_id.clone(),
            catalog_ref: payload.catalog_ref.clone(),
            selected_blocks: payload.selected_blocks.clone(),
            answers: Vec::new(),
            metadata: payload.metadata.clone(),
            state: SessionState::InProgress,
            events: Vec::new(),
        };
        session.push_event(at, EventBody::Start(payload));
        session.settle(catalog, at);
        Ok(session)
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    /// Sequence number of the latest event; the optimistic-concurrency token.
    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn is_complete(&self) -> bool {
        self.state == SessionState::Complete
    }

    pub fn answer(&self, key: &AnswerKey) -> Option<&AnswerRecord> {
        self.answers.iter().find(|r| &r.key == key)
    }

    fn check_catalog(&self, catalog: &Catalog) -> Result<(), TraversalError> {
        let found = catalog.reference();
        if found != self.catalog_ref {
            return Err(TraversalError::CatalogMismatch { expected: self.catalog_ref.clone(), found });
        }
        Ok(())
    }

    fn verdicts_for(&self, block_id: &str) -> HashMap<&IndicatorId, Verdict> {
        self.answers
            .iter()
            .filter(|r| r.key.block_id == block_id)
            .map(|r| (&r.key.indicator, r.value.verdict))
            .collect()
    }

    fn selected<'c>(&'c self, catalog: &'c Catalog) -> impl Iterator<Item = &'c Block> + 'c {
        self.selected_blocks.iter().filter_map(move |b| catalog.block(b))
    }

    /// First unanswered indicator whose ancestors were all answered "yes".
    pub fn current_question(&self, catalog: &Catalog) -> Question {
        for block in self.selected(catalog) {
            let verdicts = self.verdicts_for(&block.block_id);
            let next = block.ids().find(|id| {
                !verdicts.contains_key(id) && id.ancestors().all(|a| verdicts.get(&a) == Some(&Verdict::Yes))
            });
            if let Some(id) = next {
                return Question::Ask(AnswerKey::new(&block.block_id, id.clone()));
            }
        }
        Question::Done
    }

    pub fn progress(&self, catalog: &Catalog) -> Progress {
        let mut remaining = 0;
        for block in self.selected(catalog) {
            let verdicts = self.verdicts_for(&block.block_id);
            remaining += block
                .ids()
                .filter(|id| {
                    !verdicts.contains_key(id) && id.ancestors().all(|a| verdicts.get(&a) != Some(&Verdict::No))
                })
                .count();
        }
        Progress { answered: self.answers.len(), reachable_remaining_upper_bound: remaining }
    }

    /// Keys answered so far.
    pub fn asked_set(&self) -> BTreeSet<AnswerKey> {
        self.answers.iter().map(|r| r.key.clone()).collect()
    }

    pub fn submit_answer(
        &mut self,
        catalog: &Catalog,
        key: &AnswerKey,
        value: AnswerValue,
        comment: Option<String>,
        at: DateTime<Utc>,
    ) -> Result<(), TraversalError> {
        self.check_catalog(catalog)?;
        check_comment(&comment)?;
        if self.is_complete() {
            return Err(TraversalError::SessionComplete);
        }
        match self.current_question(catalog) {
            Question::Ask(expected) if &expected == key => {}
            other => return Err(TraversalError::OutOfOrderAnswer { expected: other.key().cloned(), got: key.clone() }),
        }
        self.answers.push(AnswerRecord { key: key.clone(), value, comment: comment.clone(), answered_at: at });
        self.push_event(at, EventBody::Answer(AnswerPayload { key: key.clone(), value, comment }));
        self.settle(catalog, at);
        Ok(())
    }

    /// Replaces an existing answer. Flipping to "no" drops every descendant
    /// answer; flipping to "yes" reopens the children for questioning.
    pub fn revise_answer(
        &mut self,
        catalog: &Catalog,
        key: &AnswerKey,
        value: AnswerValue,
        comment: Option<String>,
        at: DateTime<Utc>,
    ) -> Result<Vec<IndicatorId>, TraversalError> {
        self.check_catalog(catalog)?;
        check_comment(&comment)?;
        let known = self.selected_blocks.contains(&key.block_id)
            && catalog.block(&key.block_id).is_some_and(|b| b.contains(&key.indicator));
        if !known {
            return Err(TraversalError::UnknownIndicator(key.clone()));
        }
        let position = self
            .answers
            .iter()
            .position(|r| &r.key == key)
            .ok_or_else(|| TraversalError::NeverAnswered(key.clone()))?;

        let record = &mut self.answers[position];
        record.value = value;
        record.comment = comment.clone();
        record.answered_at = at;

        let mut removed = Vec::new();
        if !value.is_yes() {
            self.answers.retain(|r| {
                let drop = r.key.block_id == key.block_id && key.indicator.is_ancestor_of(&r.key.indicator);
                if drop {
                    removed.push(r.key.indicator.clone());
                }
                !drop
            });
            removed.sort();
        }
        self.push_event(
            at,
            EventBody::Revise(RevisePayload { key: key.clone(), value, comment, removed: removed.clone() }),
        );
        self.settle(catalog, at);
        Ok(removed)
    }

    /// Recomputes the state and logs completion when the last question is answered.
    fn settle(&mut self, catalog: &Catalog, at: DateTime<Utc>) {
        let done = self.current_question(catalog) == Question::Done;
        match (self.state, done) {
            (SessionState::InProgress, true) => {
                self.state = SessionState::Complete;
                let answered = self.answers.len();
                self.push_event(at, EventBody::Complete(CompletePayload { answered }));
            }
            (SessionState::Complete, false) => self.state = SessionState::InProgress,
            _ => {}
        }
    }

    fn push_event(&mut self, ts: DateTime<Utc>, body: EventBody) {
        let seq = self.last_seq() + 1;
        self.events.push(SessionEvent { seq, ts, body });
    }

    /// Rebuilds a session from its event log. The rebuilt log must match the
    /// input event for event.
    pub fn replay(catalog: &Catalog, events: &[SessionEvent]) -> Result<Session, TraversalError> {
        let replay_err = |seq, reason: String| TraversalError::Replay { seq, reason };
        let (first, rest) = events.split_first().ok_or_else(|| replay_err(0, "empty log".into()))?;
        let EventBody::Start(start) = &first.body else {
            return Err(replay_err(first.seq, "log must begin with a start event".into()));
        };
        if start.catalog_ref != catalog.reference() {
            return Err(TraversalError::CatalogMismatch {
                expected: start.catalog_ref.clone(),
                found: catalog.reference(),
            });
        }
        let mut session = Session::start_with_id(
            catalog,
            start.session_id.clone(),
            start.selected_blocks.clone(),
            start.metadata.clone(),
            first.ts,
        )?;
        for event in rest {
            match &event.body {
                EventBody::Start(_) => return Err(replay_err(event.seq, "duplicate start event".into())),
                EventBody::Answer(a) => {
                    session.submit_answer(catalog, &a.key, a.value, a.comment.clone(), event.ts)?;
                }
                EventBody::Revise(r) => {
                    session.revise_answer(catalog, &r.key, r.value, r.comment.clone(), event.ts)?;
                }
                // Emitted by the preceding answer or revise; checked by the
                // whole-log comparison below.
                EventBody::Complete(_) => {}
            }
        }
        if session.events != events {
            let seq = session
                .events
                .iter()
                .zip(events)
                .find(|(a, b)| a != b)
                .map_or_else(|| session.events.len().min(events.len()) as u64 + 1, |(_, b)| b.seq);
            return Err(replay_err(seq, "log does not match the replayed state".into()));
        }
        Ok(session)
    }

    /// Newline-delimited JSON rendering of the event log.
    pub fn to_ndjson(&self) -> String {
        events_to_ndjson(&self.events)
    }
}

pub fn events_to_ndjson(events: &[SessionEvent]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&serde_json::to_string(event).expect("events serialize"));
        out.push('\n');
    }
    out
}

pub fn events_from_ndjson(text: &str) -> Result<Vec<SessionEvent>, TraversalError> {
    let mut events: Vec<SessionEvent> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: SessionEvent = serde_json::from_str(line)
            .map_err(|e| TraversalError::Replay { seq: n as u64 + 1, reason: e.to_string() })?;
        let expected = events.last().map_or(1, |e| e.seq + 1);
        if event.seq != expected {
            return Err(TraversalError::Replay { seq: event.seq, reason: format!("expected seq {expected}") });
        }
        events.push(event);
    }
    Ok(events)
}

fn check_comment(comment: &Option<String>) -> Result<(), TraversalError> {
    match comment {
        Some(c) if c.chars().count() > MAX_COMMENT_CHARS => Err(TraversalError::CommentTooLong),
        _ => Ok(()),
    }
}
