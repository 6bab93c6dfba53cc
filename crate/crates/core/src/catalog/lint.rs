//! Catalog lint: structural errors and weight-design warnings.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::analysis::{subtree_range, ScoreRange};
use super::format::{parse_rows, BlockSource, RowProblem};
use super::{orphan_issues, Block, Catalog, IndicatorId, Layer, StructureIssue, MAX_WEIGHT};
use crate::decimal::Score;
use crate::exec::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LintCode {
    Parse,
    BadSegment,
    DuplicateBlock,
    DuplicateId,
    OrphanParent,
    EmptyText,
    ScoreRange,
    /// Full mitigation under a penalised root does not cancel the penalty.
    ZeroSum,
    /// Relevance penalty with no follow-up through which it can be regained.
    NoRegain,
    /// Best case of a block lifts the score above the baseline.
    Overshoot,
}

impl LintCode {
    pub fn as_str(self) -> &'static str {
        match self {
            LintCode::Parse => "PARSE",
            LintCode::BadSegment => "BAD_SEGMENT",
            LintCode::DuplicateBlock => "DUPLICATE_BLOCK",
            LintCode::DuplicateId => "DUPLICATE_ID",
            LintCode::OrphanParent => "ORPHAN_PARENT",
            LintCode::EmptyText => "EMPTY_TEXT",
            LintCode::ScoreRange => "SCORE_RANGE",
            LintCode::ZeroSum => "ZERO_SUM",
            LintCode::NoRegain => "NO_REGAIN",
            LintCode::Overshoot => "OVERSHOOT",
        }
    }

    fn severity(self) -> Severity {
        match self {
            LintCode::ZeroSum | LintCode::NoRegain | LintCode::Overshoot => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for LintCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LintFinding {
    pub severity: Severity,
    pub code: LintCode,
    pub block_id: String,
    pub indicator: Option<IndicatorId>,
    /// Source line, when the finding comes from a file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    pub message: String,
    pub residual: Option<Score>,
}

impl LintFinding {
    fn new(code: LintCode, block_id: &str, indicator: Option<IndicatorId>, message: String) -> Self {
        LintFinding {
            severity: code.severity(),
            code,
            block_id: block_id.to_string(),
            indicator,
            line: None,
            message,
            residual: None,
        }
    }

    fn at_line(mut self, line: u64) -> Self {
        self.line = Some(line);
        self
    }

    fn with_residual(mut self, residual: Score) -> Self {
        self.residual = Some(residual);
        self
    }
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let severity = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{severity}[{}] {}", self.code, self.block_id)?;
        if let Some(id) = &self.indicator {
            write!(f, " {id}")?;
        }
        if let Some(line) = self.line {
            write!(f, " (line {line})")?;
        }
        write!(f, ": {}", self.message)?;
        if let Some(r) = self.residual {
            write!(f, " [residual {r}]")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LintReport {
    pub indicator_count: usize,
    pub findings: Vec<LintFinding>,
}

impl LintReport {
    pub fn errors(&self) -> impl Iterator<Item = &LintFinding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &LintFinding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn has_warnings(&self) -> bool {
        self.warnings().next().is_some()
    }

    fn finish(indicator_count: usize, block_order: &[&str], mut findings: Vec<LintFinding>) -> LintReport {
        let position: HashMap<&str, usize> = block_order.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        findings.sort_by(|a, b| {
            let pa = position.get(a.block_id.as_str()).copied().unwrap_or(usize::MAX);
            let pb = position.get(b.block_id.as_str()).copied().unwrap_or(usize::MAX);
            (pa, &a.block_id, &a.indicator, a.code, a.line, &a.message).cmp(&(
                pb,
                &b.block_id,
                &b.indicator,
                b.code,
                b.line,
                &b.message,
            ))
        });
        LintReport { indicator_count, findings }
    }
}

/// Text and weight-range checks that a parsed catalog should already satisfy
/// but a programmatically built one may not.
fn content_findings(block: &Block) -> Vec<LintFinding> {
    let mut out = Vec::new();
    for indicator in block.indicators() {
        if indicator.text.trim().is_empty() {
            out.push(LintFinding::new(
                LintCode::EmptyText,
                &block.block_id,
                Some(indicator.id.clone()),
                "question text is empty".into(),
            ));
        }
        for (name, s) in [("yes_score", indicator.yes_score), ("no_score", indicator.no_score)] {
            if s.abs() > MAX_WEIGHT {
                out.push(LintFinding::new(
                    LintCode::ScoreRange,
                    &block.block_id,
                    Some(indicator.id.clone()),
                    format!("{name} {s} exceeds magnitude {MAX_WEIGHT}"),
                ));
            }
        }
    }
    out
}

fn weight_findings(block: &Block, tolerance: Score) -> Vec<LintFinding> {
    let mut out = Vec::new();
    for root in block.roots() {
        let indicator = block.get(root).expect("root from block");
        if !indicator.yes_score.is_negative() {
            continue;
        }
        let regain = subtree_range(block, root).expect("root from block").max;
        let residual = indicator.yes_score + regain;
        if residual.abs() > tolerance {
            out.push(
                LintFinding::new(
                    LintCode::ZeroSum,
                    &block.block_id,
                    Some(root.clone()),
                    format!(
                        "penalty {} is offset by at most {regain} when every follow-up is satisfied",
                        indicator.yes_score
                    ),
                )
                .with_residual(residual),
            );
        }
    }
    for indicator in block.indicators() {
        if indicator.layer == Layer::Relevance
            && indicator.yes_score.is_negative()
            && block.children_unchecked(&indicator.id).next().is_none()
        {
            out.push(LintFinding::new(
                LintCode::NoRegain,
                &block.block_id,
                Some(indicator.id.clone()),
                format!("relevance penalty {} has no follow-up indicators", indicator.yes_score),
            ));
        }
    }
    let best = ScoreRange::for_block(block).max;
    if best > Score::ZERO {
        out.push(
            LintFinding::new(
                LintCode::Overshoot,
                &block.block_id,
                None,
                format!("best-case answers add {best} above the baseline"),
            )
            .with_residual(best),
        );
    }
    out
}

pub fn lint_catalog(catalog: &Catalog, zero_sum_tolerance: Score) -> LintReport {
    lint_catalog_with(catalog, zero_sum_tolerance, Execution::default())
}

/// [`lint_catalog`] with an explicit execution strategy.
pub fn lint_catalog_with(catalog: &Catalog, zero_sum_tolerance: Score, execution: Execution) -> LintReport {
    let per_block = execution.map(catalog.blocks(), |block| {
        let mut findings = content_findings(block);
        findings.extend(weight_findings(block, zero_sum_tolerance));
        findings
    });
    let order: Vec<&str> = catalog.blocks().iter().map(|b| b.block_id.as_str()).collect();
    LintReport::finish(catalog.indicator_count(), &order, per_block.into_iter().flatten().collect())
}

/// Lints raw block files, reporting parse and structure problems as findings
/// instead of failing.
pub fn lint_sources(sources: &[BlockSource], zero_sum_tolerance: Score) -> LintReport {
    let mut findings = Vec::new();
    let mut seen_blocks = HashSet::new();
    let mut indicator_count = 0;
    for source in sources {
        let bid = source.block_id.as_str();
        if !seen_blocks.insert(bid) {
            findings.push(LintFinding::new(LintCode::DuplicateBlock, bid, None, "block listed more than once".into()));
        }
        let rows = parse_rows(&source.text);
        indicator_count += rows.indicators.len();
        for (line, problem) in &rows.problems {
            let finding = match problem {
                RowProblem::Malformed(reason) => LintFinding::new(LintCode::Parse, bid, None, reason.clone()),
                RowProblem::BadSegment(e) => LintFinding::new(LintCode::BadSegment, bid, None, e.to_string()),
                RowProblem::EmptyText(id) => {
                    LintFinding::new(LintCode::EmptyText, bid, Some(id.clone()), "question text is empty".into())
                }
                RowProblem::ScoreOutOfRange(id, s) => LintFinding::new(
                    LintCode::ScoreRange,
                    bid,
                    Some(id.clone()),
                    format!("score {s} exceeds magnitude {MAX_WEIGHT}"),
                ),
            };
            findings.push(finding.at_line(*line));
        }

        let mut structural = false;
        let mut lines: HashMap<&IndicatorId, u64> = HashMap::new();
        for (line, indicator) in &rows.indicators {
            if lines.insert(&indicator.id, *line).is_some() {
                structural = true;
                findings.push(
                    LintFinding::new(
                        LintCode::DuplicateId,
                        bid,
                        Some(indicator.id.clone()),
                        "indicator number appears more than once".into(),
                    )
                    .at_line(*line),
                );
            }
        }
        for issue in orphan_issues(rows.indicators.iter().map(|(_, i)| &i.id)) {
            if let StructureIssue::OrphanParent { id, parent } = issue {
                structural = true;
                let line = lines.get(&id).copied();
                let mut finding =
                    LintFinding::new(LintCode::OrphanParent, bid, Some(id), format!("parent {parent} does not exist"));
                finding.line = line;
                findings.push(finding);
            }
        }
        // Weight analysis needs a well-formed tree; rows that failed to parse
        // are missing from it, so skip it after any parse problem as well.
        if !structural && rows.problems.is_empty() {
            let block = Block::new(bid, &source.title, rows.indicators.into_iter().map(|(_, i)| i))
                .expect("structure already checked");
            findings.extend(weight_findings(&block, zero_sum_tolerance));
        }
    }
    let order: Vec<&str> = sources.iter().map(|s| s.block_id.as_str()).collect();
    LintReport::finish(indicator_count, &order, findings)
}
