//! Ethics readiness level (ERL) evaluation engine.
//!
//! * [`catalog`]: indicator blocks, their CSV format, and weight lint.
//! * [`traversal`]: adaptive yes/no sessions with an append-only event log.
//! * [`scoring`]: contributions, global and per-block scores, ERL levels.
//! * [`script`]: CSV answer files for scripted sessions.
//! * [`store`]: file-based per-use-case session store, timelines and diffs.

pub mod catalog;
pub mod decimal;
pub mod exec;
pub mod scoring;
pub mod script;
pub mod store;
pub mod traversal;

pub use catalog::{Block, Catalog, CatalogRef, Indicator, IndicatorId, Layer};
pub use decimal::Score;
pub use exec::Execution;
pub use scoring::{ErlLevel, ScoreReport, ScoringConfig, ScoringMode};
pub use traversal::{AnswerKey, AnswerValue, Question, Session, SessionMetadata, Verdict};
