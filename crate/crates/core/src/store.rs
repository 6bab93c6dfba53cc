//! File-based session store.
//!
//! ```text
//! <root>/<use_case_id>/manifest.json
//! <root>/<use_case_id>/sessions/<session_id>.ndjson
//! ```
//!
//! Session logs only ever grow. Every file is replaced by writing a temporary
//! sibling and renaming it over the target, and a session becomes visible
//! only once the manifest lists it. Scores are never stored: timelines and
//! diffs replay the logs and rescore them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogRef};
use crate::decimal::Score;
use crate::exec::Execution;
use crate::scoring::{score_session, BlockScore, ErlLevel, ScoreReport, ScoringConfig, ScoringError};
use crate::traversal::{events_from_ndjson, AnswerKey, AnswerValue, Session, TraversalError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("catalog {0} is not loaded")]
    UnknownCatalog(CatalogRef),
    #[error("use case is bound to catalog {expected}, session uses {found}")]
    CatalogMismatch { expected: CatalogRef, found: CatalogRef },
    #[error("use case is bound to blocks {expected:?}, session selects {found:?}")]
    SelectionMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("use case was recorded with a different scoring configuration")]
    ConfigMismatch,
    #[error("sessions belong to different use cases ({0} and {1})")]
    UseCaseMismatch(String, String),
    #[error("unknown use case `{0}`")]
    UnknownUseCase(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session is still in progress; save it as a draft")]
    SessionIncomplete,
    #[error("score report does not match a fresh computation from the answers")]
    ReportMismatch,
    #[error("session `{0}` would rewrite already stored events")]
    AppendOnlyViolation(String),
    #[error("`{0}` is not a valid identifier (letters, digits, `-`, `_`, `.`)")]
    InvalidId(String),
    #[error("store is locked by another writer: {0}")]
    Locked(PathBuf),
    #[error("corrupt store file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("storage failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Traversal(#[from] TraversalError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Simulated crash points for atomicity tests.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Half of the temporary file is written, then the writer dies.
    TornTempWrite,
    /// The temporary file is complete but never renamed.
    BeforeRename,
    /// The session log is committed but the manifest is not updated.
    BeforeManifest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub session_id: String,
    pub session_date: NaiveDate,
    pub complete: bool,
    pub events: u64,
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseCaseRecord {
    pub use_case_id: String,
    pub title: String,
    pub catalog_ref: CatalogRef,
    pub selected_blocks: Vec<String>,
    pub config: ScoringConfig,
    /// Ordered by session date, then id.
    pub sessions: Vec<SessionEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub session_id: String,
    pub session_date: NaiveDate,
    pub complete: bool,
    pub global_score: Score,
    pub erl_level: ErlLevel,
    pub block_scores: Vec<BlockScore>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub use_case_id: String,
    pub points: Vec<TimelinePoint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerChange {
    #[serde(flatten)]
    pub key: AnswerKey,
    pub old: Option<AnswerValue>,
    pub new: Option<AnswerValue>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContributionDelta {
    #[serde(flatten)]
    pub key: AnswerKey,
    pub old: Score,
    pub new: Score,
    pub delta: Score,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDelta {
    pub block_id: String,
    pub old: Score,
    pub new: Score,
    pub delta: Score,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErlChange {
    pub old: u8,
    pub new: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionDiff {
    pub from_id: String,
    pub to_id: String,
    pub answer_changes: Vec<AnswerChange>,
    pub contribution_delta_by_indicator: Vec<ContributionDelta>,
    /// Normalized block scores.
    pub block_deltas: Vec<BlockDelta>,
    pub old_global: Score,
    pub new_global: Score,
    pub global_delta: Score,
    pub erl_change: ErlChange,
}

/// Compares two sessions scored under the same catalog and configuration.
pub fn diff_sessions(
    catalog: &Catalog,
    config: &ScoringConfig,
    from: &Session,
    to: &Session,
) -> Result<SessionDiff, ScoringError> {
    let old = score_session(catalog, from, config)?;
    let new = score_session(catalog, to, config)?;
    Ok(diff_reports(from, to, &old, &new))
}

fn diff_reports(from: &Session, to: &Session, old: &ScoreReport, new: &ScoreReport) -> SessionDiff {
    // Keys ordered by block position in the selection, then indicator.
    let blocks: Vec<&String> = {
        let mut seen = Vec::new();
        for b in from.selected_blocks.iter().chain(&to.selected_blocks) {
            if !seen.contains(&b) {
                seen.push(b);
            }
        }
        seen
    };
    let rank = |k: &AnswerKey| blocks.iter().position(|b| **b == k.block_id).unwrap_or(usize::MAX);
    let mut keys: Vec<AnswerKey> =
        from.answers.iter().chain(&to.answers).map(|r| r.key.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    keys.sort_by(|a, b| (rank(a), &a.indicator).cmp(&(rank(b), &b.indicator)));

    let values = |s: &Session| -> HashMap<AnswerKey, AnswerValue> {
        s.answers.iter().map(|r| (r.key.clone(), r.value)).collect()
    };
    let (old_values, new_values) = (values(from), values(to));
    let contributions = |r: &ScoreReport| -> HashMap<AnswerKey, Score> {
        r.contributions.iter().map(|c| (c.key.clone(), c.contribution)).collect()
    };
    let (old_contrib, new_contrib) = (contributions(old), contributions(new));

    let mut answer_changes = Vec::new();
    let mut contribution_delta_by_indicator = Vec::new();
    for key in keys {
        let (o, n) = (old_values.get(&key).copied(), new_values.get(&key).copied());
        if o != n {
            answer_changes.push(AnswerChange { key: key.clone(), old: o, new: n });
        }
        let oc = old_contrib.get(&key).copied().unwrap_or(Score::ZERO);
        let nc = new_contrib.get(&key).copied().unwrap_or(Score::ZERO);
        if oc != nc {
            contribution_delta_by_indicator.push(ContributionDelta { key, old: oc, new: nc, delta: nc - oc });
        }
    }

    let block_map = |r: &ScoreReport| -> BTreeMap<String, Score> {
        r.block_scores.iter().map(|b| (b.block_id.clone(), b.normalized)).collect()
    };
    let (old_blocks, new_blocks) = (block_map(old), block_map(new));
    let block_deltas = blocks
        .iter()
        .map(|b| {
            let o = old_blocks.get(*b).copied().unwrap_or(Score::ZERO);
            let n = new_blocks.get(*b).copied().unwrap_or(Score::ZERO);
            BlockDelta { block_id: (*b).clone(), old: o, new: n, delta: n - o }
        })
        .collect();

    SessionDiff {
        from_id: from.session_id.clone(),
        to_id: to.session_id.clone(),
        answer_changes,
        contribution_delta_by_indicator,
        block_deltas,
        old_global: old.global_score,
        new_global: new.global_score,
        global_delta: new.global_score - old.global_score,
        erl_change: ErlChange { old: old.erl.level, new: new.erl.level },
    }
}

pub(crate) fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn check_id(id: &str) -> Result<(), StoreError> {
    if is_valid_id(id) {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Holds the per-use-case writer lock until dropped.
struct WriterLock {
    file: File,
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

pub struct Store {
    root: PathBuf,
    catalogs: HashMap<CatalogRef, Arc<Catalog>>,
    fault: Mutex<Option<(Fault, u32)>>,
}

impl Store {
    pub fn open(
        root: impl Into<PathBuf>,
        catalogs: impl IntoIterator<Item = Arc<Catalog>>,
    ) -> Result<Store, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let probe = root.join(format!(".probe-{}", std::process::id()));
        fs::write(&probe, b"").map_err(io_err(&root))?;
        let _ = fs::remove_file(&probe);
        Ok(Store {
            root,
            catalogs: catalogs.into_iter().map(|c| (c.reference(), c)).collect(),
            fault: Mutex::new(None),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog(&self, reference: &CatalogRef) -> Result<&Arc<Catalog>, StoreError> {
        self.catalogs.get(reference).ok_or_else(|| StoreError::UnknownCatalog(reference.clone()))
    }

    /// Arms a one-shot simulated crash for the next write.
    #[doc(hidden)]
    pub fn inject_fault(&self, fault: Fault) {
        self.inject_fault_at(fault, 0);
    }

    /// Arms a one-shot simulated crash for a later file write. A save writes
    /// the session log (index 0) and then the manifest (index 1).
    #[doc(hidden)]
    pub fn inject_fault_at(&self, fault: Fault, write_index: u32) {
        *self.fault.lock().expect("fault lock") = Some((fault, write_index));
    }

    #[doc(hidden)]
    pub fn clear_fault(&self) {
        *self.fault.lock().expect("fault lock") = None;
    }

    fn take_fault(&self, wanted: Fault) -> bool {
        let mut slot = self.fault.lock().expect("fault lock");
        if matches!(*slot, Some((f, 0)) if f == wanted) {
            *slot = None;
            true
        } else {
            false
        }
    }

    /// Called once per file write so indexed faults count down.
    fn count_write(&self) {
        let mut slot = self.fault.lock().expect("fault lock");
        if let Some((fault, n)) = *slot {
            if n > 0 && fault != Fault::BeforeManifest {
                *slot = Some((fault, n - 1));
            }
        }
    }

    fn use_case_dir(&self, use_case_id: &str) -> PathBuf {
        self.root.join(use_case_id)
    }

    fn manifest_path(&self, use_case_id: &str) -> PathBuf {
        self.use_case_dir(use_case_id).join("manifest.json")
    }

    fn session_path(&self, use_case_id: &str, session_id: &str) -> PathBuf {
        self.use_case_dir(use_case_id).join("sessions").join(format!("{session_id}.ndjson"))
    }

    fn simulated_crash(path: &Path) -> StoreError {
        StoreError::Io { path: path.to_path_buf(), source: std::io::Error::other("simulated crash") }
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let dir = path.parent().expect("store paths have parents");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
        let tmp =
            dir.join(format!(".{name}.tmp-{}-{}", std::process::id(), TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)));
        let mut file = OpenOptions::new().write(true).create_new(true).open(&tmp).map_err(io_err(&tmp))?;
        if self.take_fault(Fault::TornTempWrite) {
            file.write_all(&bytes[..bytes.len() / 2]).map_err(io_err(&tmp))?;
            return Err(Self::simulated_crash(path));
        }
        file.write_all(bytes).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
        drop(file);
        if self.take_fault(Fault::BeforeRename) {
            return Err(Self::simulated_crash(path));
        }
        fs::rename(&tmp, path).map_err(io_err(path))?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        self.count_write();
        Ok(())
    }

    fn lock(&self, use_case_id: &str) -> Result<WriterLock, StoreError> {
        let dir = self.use_case_dir(use_case_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(".lock");
        let file = OpenOptions::new().create(true).truncate(false).write(true).open(&path).map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(WriterLock { file }),
            Err(std::fs::TryLockError::WouldBlock) => Err(StoreError::Locked(path)),
            Err(std::fs::TryLockError::Error(e)) => Err(StoreError::Io { path, source: e }),
        }
    }

    pub fn use_case(&self, use_case_id: &str) -> Result<UseCaseRecord, StoreError> {
        check_id(use_case_id)?;
        self.read_manifest(use_case_id)?.ok_or_else(|| StoreError::UnknownUseCase(use_case_id.to_string()))
    }

    fn read_manifest(&self, use_case_id: &str) -> Result<Option<UseCaseRecord>, StoreError> {
        let path = self.manifest_path(use_case_id);
        match fs::read_to_string(&path) {
            Ok(text) => {
                serde_json::from_str(&text).map(Some).map_err(|e| StoreError::Corrupt { path, reason: e.to_string() })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StoreError::Io { path, source: e }),
        }
    }

    pub fn use_cases(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if is_valid_id(&name) && entry.path().join("manifest.json").is_file() {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Saves a completed session. `report` must equal a fresh computation.
    pub fn save_session(
        &self,
        use_case_id: &str,
        session: &Session,
        report: &ScoreReport,
        config: &ScoringConfig,
    ) -> Result<String, StoreError> {
        if !session.is_complete() {
            return Err(StoreError::SessionIncomplete);
        }
        let catalog = self.catalog(&session.catalog_ref)?;
        if &score_session(catalog, session, config)? != report {
            return Err(StoreError::ReportMismatch);
        }
        self.persist(use_case_id, session, config)
    }

    /// Saves an in-progress session so it can be resumed later.
    pub fn save_draft(
        &self,
        use_case_id: &str,
        session: &Session,
        config: &ScoringConfig,
    ) -> Result<String, StoreError> {
        self.catalog(&session.catalog_ref)?;
        self.persist(use_case_id, session, config)
    }

    fn persist(&self, use_case_id: &str, session: &Session, config: &ScoringConfig) -> Result<String, StoreError> {
        check_id(use_case_id)?;
        check_id(&session.session_id)?;
        config.validate()?;
        if session.metadata.use_case_id != use_case_id {
            return Err(StoreError::UseCaseMismatch(session.metadata.use_case_id.clone(), use_case_id.to_string()));
        }
        let _guard = self.lock(use_case_id)?;
        let mut record = match self.read_manifest(use_case_id)? {
            Some(record) => {
                if record.catalog_ref != session.catalog_ref {
                    return Err(StoreError::CatalogMismatch {
                        expected: record.catalog_ref,
                        found: session.catalog_ref.clone(),
                    });
                }
                if record.selected_blocks != session.selected_blocks {
                    return Err(StoreError::SelectionMismatch {
                        expected: record.selected_blocks,
                        found: session.selected_blocks.clone(),
                    });
                }
                if &record.config != config {
                    return Err(StoreError::ConfigMismatch);
                }
                record
            }
            None => UseCaseRecord {
                use_case_id: use_case_id.to_string(),
                title: session.metadata.title.clone(),
                catalog_ref: session.catalog_ref.clone(),
                selected_blocks: session.selected_blocks.clone(),
                config: *config,
                sessions: Vec::new(),
            },
        };

        let path = self.session_path(use_case_id, &session.session_id);
        let new_log = session.to_ndjson();
        let listed = record.sessions.iter().position(|e| e.session_id == session.session_id);
        if let Some(index) = listed {
            let old_log = fs::read_to_string(&path).map_err(io_err(&path))?;
            if !new_log.starts_with(&old_log) {
                return Err(StoreError::AppendOnlyViolation(session.session_id.clone()));
            }
            let entry = &record.sessions[index];
            if old_log == new_log && entry.complete == session.is_complete() {
                return Ok(session.session_id.clone());
            }
        }
        self.write_atomic(&path, new_log.as_bytes())?;
        if self.take_fault(Fault::BeforeManifest) {
            return Err(Self::simulated_crash(&self.manifest_path(use_case_id)));
        }

        let entry = SessionEntry {
            session_id: session.session_id.clone(),
            session_date: session.metadata.session_date,
            complete: session.is_complete(),
            events: session.last_seq(),
        };
        match listed {
            Some(index) => record.sessions[index] = entry,
            None => record.sessions.push(entry),
        }
        record.sessions.sort_by(|a, b| (a.session_date, &a.session_id).cmp(&(b.session_date, &b.session_id)));
        let manifest = serde_json::to_vec_pretty(&record).expect("manifest serializes");
        self.write_atomic(&self.manifest_path(use_case_id), &manifest)?;
        Ok(session.session_id.clone())
    }

    pub fn load_session(&self, use_case_id: &str, session_id: &str) -> Result<Session, StoreError> {
        let record = self.use_case(use_case_id)?;
        self.load_listed(&record, session_id)
    }

    fn load_listed(&self, record: &UseCaseRecord, session_id: &str) -> Result<Session, StoreError> {
        let entry = record
            .sessions
            .iter()
            .find(|e| e.session_id == session_id)
            .ok_or_else(|| StoreError::UnknownSession(session_id.to_string()))?;
        let path = self.session_path(&record.use_case_id, session_id);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let events =
            events_from_ndjson(&text).map_err(|e| StoreError::Corrupt { path: path.clone(), reason: e.to_string() })?;
        // Later appends may have landed after the manifest was read; only the
        // committed prefix is visible.
        let committed = events.into_iter().take(entry.events as usize).collect::<Vec<_>>();
        let catalog = self.catalog(&record.catalog_ref)?;
        Ok(Session::replay(catalog, &committed)?)
    }

    /// Finds the use case holding `session_id`.
    pub fn locate_session(&self, session_id: &str) -> Result<UseCaseRecord, StoreError> {
        for use_case_id in self.use_cases()? {
            let record = self.use_case(&use_case_id)?;
            if record.sessions.iter().any(|e| e.session_id == session_id) {
                return Ok(record);
            }
        }
        Err(StoreError::UnknownSession(session_id.to_string()))
    }

    /// Rescores a stored session from its log.
    pub fn score(&self, use_case_id: &str, session_id: &str) -> Result<ScoreReport, StoreError> {
        let record = self.use_case(use_case_id)?;
        let session = self.load_listed(&record, session_id)?;
        Ok(score_session(self.catalog(&record.catalog_ref)?, &session, &record.config)?)
    }

    pub fn timeline(&self, use_case_id: &str) -> Result<Timeline, StoreError> {
        self.timeline_with(use_case_id, Execution::default())
    }

    pub fn timeline_with(&self, use_case_id: &str, execution: Execution) -> Result<Timeline, StoreError> {
        let record = self.use_case(use_case_id)?;
        let catalog = self.catalog(&record.catalog_ref)?;
        let points = execution
            .map(&record.sessions, |entry| -> Result<TimelinePoint, StoreError> {
                let session = self.load_listed(&record, &entry.session_id)?;
                let report = score_session(catalog, &session, &record.config)?;
                Ok(TimelinePoint {
                    session_id: entry.session_id.clone(),
                    session_date: entry.session_date,
                    complete: entry.complete,
                    global_score: report.global_score,
                    erl_level: report.erl,
                    block_scores: report.block_scores,
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Timeline { use_case_id: use_case_id.to_string(), points })
    }

    pub fn diff_sessions(&self, from_id: &str, to_id: &str) -> Result<SessionDiff, StoreError> {
        let from_case = self.locate_session(from_id)?;
        let to_case = self.locate_session(to_id)?;
        if from_case.use_case_id != to_case.use_case_id {
            return Err(StoreError::UseCaseMismatch(from_case.use_case_id, to_case.use_case_id));
        }
        let catalog = self.catalog(&from_case.catalog_ref)?;
        let from = self.load_listed(&from_case, from_id)?;
        let to = self.load_listed(&from_case, to_id)?;
        Ok(diff_sessions(catalog, &from_case.config, &from, &to)?)
    }
}
