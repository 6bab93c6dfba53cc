//! Session scoring and ERL classification.
//!
//! Every session starts from a baseline of 4 and each answer adds the
//! indicator's yes or no weight. In [`ScoringMode::GlobalSum`] one baseline
//! covers the whole session and the sum is left unclamped. In
//! [`ScoringMode::BlockMin`] each block gets its own baseline, is clamped to
//! `[block_floor, block_ceiling]`, and the session score is the lowest block.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogRef, Indicator};
use crate::decimal::Score;
use crate::exec::Execution;
use crate::traversal::{AnswerKey, AnswerValue, Session, Verdict};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    #[default]
    GlobalSum,
    BlockMin,
}

impl ScoringMode {
    pub fn parse(text: &str) -> Option<ScoringMode> {
        match text.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "global_sum" | "global" => Some(ScoringMode::GlobalSum),
            "block_min" | "min" => Some(ScoringMode::BlockMin),
            _ => None,
        }
    }
}

/// Score to level mapping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErlMapping {
    /// `clamp(ceil(score), 0, 4)`: 2.38 is ERL 3, any negative score ERL 0.
    #[default]
    CeilClamp,
    /// `clamp(floor(score), 0, 4)`. Places 2.38 at ERL 2.
    FloorClamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub baseline: Score,
    pub mode: ScoringMode,
    pub block_floor: Score,
    pub block_ceiling: Score,
    pub erl_mapping: ErlMapping,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            baseline: Score::FOUR,
            mode: ScoringMode::GlobalSum,
            block_floor: Score::ZERO,
            block_ceiling: Score::FOUR,
            erl_mapping: ErlMapping::CeilClamp,
        }
    }
}

impl ScoringConfig {
    pub fn with_mode(mode: ScoringMode) -> Self {
        ScoringConfig { mode, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.block_floor >= self.block_ceiling {
            return Err(ScoringError::InvalidConfig("block_floor must be below block_ceiling".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("session uses catalog {expected}, got {found}")]
    CatalogMismatch { expected: CatalogRef, found: CatalogRef },
    #[error("answer {0} does not exist in the catalog")]
    UnknownIndicator(AnswerKey),
    #[error("invalid scoring configuration: {0}")]
    InvalidConfig(String),
}

const LEVEL_LABELS: [&str; 5] = [
    "Ethics considerations lacking",
    "Identified Ethics Issues",
    "Characterised Interactions of Ethics issues",
    "Ethical Tensions Addressed via Ethics by Design",
    "Control Over Ethics Issues",
];

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ErlLevel {
    pub level: u8,
    pub label: String,
}

impl ErlLevel {
    pub fn new(level: u8) -> Option<ErlLevel> {
        LEVEL_LABELS.get(level as usize).map(|l| ErlLevel { level, label: (*l).to_string() })
    }
}

impl fmt::Display for ErlLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ERL {} ({})", self.level, self.label)
    }
}

pub fn classify_erl(score: Score, mapping: ErlMapping) -> ErlLevel {
    let raw = match mapping {
        ErlMapping::CeilClamp => score.ceil_int(),
        ErlMapping::FloorClamp => score.floor_int(),
    };
    ErlLevel::new(raw.clamp(0, 4) as u8).expect("clamped to 0..=4")
}

pub fn answer_contribution(indicator: &Indicator, value: AnswerValue) -> Score {
    match value.verdict {
        Verdict::Yes => indicator.yes_score,
        Verdict::No => indicator.no_score,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    #[serde(flatten)]
    pub key: AnswerKey,
    pub verdict: Verdict,
    pub contribution: Score,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockScore {
    pub block_id: String,
    pub raw_sum: Score,
    pub normalized: Score,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub session_id: String,
    /// In traversal order (block selection order, then indicator order).
    pub contributions: Vec<Contribution>,
    pub block_scores: Vec<BlockScore>,
    pub global_score: Score,
    pub erl: ErlLevel,
    pub unsure_followups: Vec<AnswerKey>,
}

fn check_catalog(catalog: &Catalog, session: &Session) -> Result<(), ScoringError> {
    if catalog.reference() != session.catalog_ref {
        return Err(ScoringError::CatalogMismatch {
            expected: session.catalog_ref.clone(),
            found: catalog.reference(),
        });
    }
    Ok(())
}

/// Contributions of every answer, in traversal order.
pub fn contributions(catalog: &Catalog, session: &Session) -> Result<Vec<Contribution>, ScoringError> {
    check_catalog(catalog, session)?;
    let mut out = Vec::with_capacity(session.answers.len());
    for block_id in &session.selected_blocks {
        let mut in_block: Vec<_> = session.answers.iter().filter(|r| &r.key.block_id == block_id).collect();
        in_block.sort_by(|a, b| a.key.indicator.cmp(&b.key.indicator));
        for record in in_block {
            let indicator = catalog
                .block(block_id)
                .and_then(|b| b.get(&record.key.indicator))
                .ok_or_else(|| ScoringError::UnknownIndicator(record.key.clone()))?;
            out.push(Contribution {
                key: record.key.clone(),
                verdict: record.value.verdict,
                contribution: answer_contribution(indicator, record.value),
            });
        }
    }
    Ok(out)
}

/// Baseline plus every contribution across all selected blocks. Unclamped.
pub fn score_global(catalog: &Catalog, session: &Session, config: &ScoringConfig) -> Result<Score, ScoringError> {
    Ok(config.baseline + contributions(catalog, session)?.iter().map(|c| c.contribution).sum::<Score>())
}

fn block_scores_from(session: &Session, contributions: &[Contribution], config: &ScoringConfig) -> Vec<BlockScore> {
    session
        .selected_blocks
        .iter()
        .map(|block_id| {
            let raw_sum: Score =
                contributions.iter().filter(|c| &c.key.block_id == block_id).map(|c| c.contribution).sum();
            BlockScore { block_id: block_id.clone(), raw_sum, normalized: normalize_block(raw_sum, config) }
        })
        .collect()
}

/// `clamp(baseline + raw_sum, block_floor, block_ceiling)`.
pub fn normalize_block(raw_sum: Score, config: &ScoringConfig) -> Score {
    (config.baseline + raw_sum).clamp_to(config.block_floor, config.block_ceiling)
}

pub fn score_blocks(
    catalog: &Catalog,
    session: &Session,
    config: &ScoringConfig,
) -> Result<Vec<BlockScore>, ScoringError> {
    Ok(block_scores_from(session, &contributions(catalog, session)?, config))
}

/// Session score for the configured mode.
pub fn global_for_mode(config: &ScoringConfig, contributions: &[Contribution], blocks: &[BlockScore]) -> Score {
    match config.mode {
        ScoringMode::GlobalSum => config.baseline + contributions.iter().map(|c| c.contribution).sum::<Score>(),
        ScoringMode::BlockMin => {
            blocks.iter().map(|b| b.normalized).min().unwrap_or(normalize_block(Score::ZERO, config))
        }
    }
}

pub fn score_session(
    catalog: &Catalog,
    session: &Session,
    config: &ScoringConfig,
) -> Result<ScoreReport, ScoringError> {
    config.validate()?;
    let contributions = contributions(catalog, session)?;
    let block_scores = block_scores_from(session, &contributions, config);
    let global_score = global_for_mode(config, &contributions, &block_scores);
    let mut unsure_followups: Vec<AnswerKey> =
        session.answers.iter().filter(|r| r.value.unsure).map(|r| r.key.clone()).collect();
    let order = |k: &AnswerKey| session.selected_blocks.iter().position(|b| b == &k.block_id);
    unsure_followups.sort_by(|a, b| (order(a), &a.indicator).cmp(&(order(b), &b.indicator)));
    Ok(ScoreReport {
        session_id: session.session_id.clone(),
        contributions,
        block_scores,
        global_score,
        erl: classify_erl(global_score, config.erl_mapping),
        unsure_followups,
    })
}

/// Contributions ordered by magnitude, largest first; ties in traversal order.
pub fn breakdown(report: &ScoreReport) -> Vec<Contribution> {
    let mut sorted = report.contributions.clone();
    // Stable sort keeps traversal order among equal magnitudes.
    sorted.sort_by_key(|c| std::cmp::Reverse(c.contribution.abs()));
    sorted
}

/// Scores many sessions against one catalog.
pub fn score_sessions(
    catalog: &Catalog,
    sessions: &[Session],
    config: &ScoringConfig,
    execution: Execution,
) -> Vec<Result<ScoreReport, ScoringError>> {
    execution.map(sessions, |s| score_session(catalog, s, config))
}

/// A trial weight change for calibration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightOverride {
    #[serde(flatten)]
    pub key: AnswerKey,
    pub yes_score: Score,
    pub no_score: Score,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WhatIfOutcome {
    pub session_id: String,
    pub before: Score,
    pub after: Score,
    pub erl_before: ErlLevel,
    pub erl_after: ErlLevel,
}

/// Rescores logged sessions under trial weights.
pub fn what_if(
    catalog: &Catalog,
    overrides: &[WeightOverride],
    sessions: &[Session],
    config: &ScoringConfig,
    execution: Execution,
) -> Result<Vec<WhatIfOutcome>, ScoringError> {
    let mut trial = catalog.clone();
    for o in overrides {
        trial
            .set_weights(&o.key.block_id, &o.key.indicator, o.yes_score, o.no_score)
            .ok_or_else(|| ScoringError::UnknownIndicator(o.key.clone()))?;
    }
    execution
        .map(sessions, |s| {
            let before = score_session(catalog, s, config)?;
            let after = score_session(&trial, s, config)?;
            Ok(WhatIfOutcome {
                session_id: s.session_id.clone(),
                before: before.global_score,
                after: after.global_score,
                erl_before: before.erl,
                erl_after: after.erl,
            })
        })
        .into_iter()
        .collect()
}

/// CSV `indicator,verdict,contribution`, with indicators written as `block/number`.
pub fn contributions_csv(contributions: &[Contribution]) -> String {
    let mut out = String::from("indicator,verdict,contribution\n");
    for c in contributions {
        out.push_str(&format!("{},{},{}\n", c.key, c.verdict, c.contribution));
    }
    out
}

/// CSV `block_id,raw_sum,normalized`.
pub fn block_scores_csv(blocks: &[BlockScore]) -> String {
    let mut out = String::from("block_id,raw_sum,normalized\n");
    for b in blocks {
        out.push_str(&format!("{},{},{}\n", b.block_id, b.raw_sum, b.normalized));
    }
    out
}
