//! Human-readable and CSV renderings of reports, timelines and diffs.

use std::fmt::Write;

use erl_core::scoring::{breakdown, Contribution};
use erl_core::store::{SessionDiff, Timeline, UseCaseRecord};
use erl_core::{AnswerKey, AnswerValue, Catalog, Score, ScoreReport, Session};

pub fn signed(s: Score) -> String {
    if s > Score::ZERO {
        format!("+{s}")
    } else {
        s.to_string()
    }
}

fn verdict_word(c: &Contribution) -> &'static str {
    match c.verdict {
        erl_core::Verdict::Yes => "yes",
        erl_core::Verdict::No => "no",
    }
}

fn answer_word(v: Option<AnswerValue>) -> &'static str {
    match v {
        None => "-",
        Some(v) if v.unsure => "unsure",
        Some(v) if v.is_yes() => "yes",
        Some(_) => "no",
    }
}

fn question_text<'c>(catalog: &'c Catalog, key: &AnswerKey) -> &'c str {
    catalog.block(&key.block_id).and_then(|b| b.get(&key.indicator)).map_or("", |i| i.text.as_str())
}

/// Markdown-style cell: pipes escaped, newlines flattened.
fn cell(text: &str) -> String {
    text.replace('|', "\\|").replace(['\r', '\n'], " ")
}

fn followups(out: &mut String, catalog: &Catalog, session: &Session, report: &ScoreReport) {
    if report.unsure_followups.is_empty() {
        return;
    }
    let _ = writeln!(out, "\n### Follow-ups\n");
    for key in &report.unsure_followups {
        let comment = session
            .answer(key)
            .and_then(|r| r.comment.as_deref())
            .map(|c| format!(" ({})", cell(c)))
            .unwrap_or_default();
        let _ = writeln!(out, "- [ ] {key}: {}{comment}", cell(question_text(catalog, key)));
    }
}

pub fn score_text(catalog: &Catalog, session: &Session, report: &ScoreReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Session {} ({}, {})",
        session.session_id, session.metadata.use_case_id, session.metadata.session_date
    );
    if !session.is_complete() {
        let _ = writeln!(out, "Status: in progress");
    }
    let _ = writeln!(out, "Global score {}  {}", report.global_score, report.erl);
    let _ = writeln!(out, "\nBlocks:");
    for b in &report.block_scores {
        let _ = writeln!(
            out,
            "  {:<24} raw {:>7}  normalized {:>6}",
            b.block_id,
            b.raw_sum.to_string(),
            b.normalized.to_string()
        );
    }
    let impact: Vec<Contribution> = breakdown(report).into_iter().filter(|c| c.contribution != Score::ZERO).collect();
    if !impact.is_empty() {
        let _ = writeln!(out, "\nContributions by impact:");
        for c in impact {
            let _ = writeln!(out, "  {:<24} {:<3} {:>7}", c.key.to_string(), verdict_word(&c), signed(c.contribution));
        }
    }
    if !report.unsure_followups.is_empty() {
        let _ = writeln!(out, "\nFollow-ups (answered unsure):");
        for key in &report.unsure_followups {
            let _ = writeln!(out, "  - {key}: {}", question_text(catalog, key));
        }
    }
    out
}

pub fn score_markdown(catalog: &Catalog, session: &Session, report: &ScoreReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## Session {} ({})\n", session.session_id, session.metadata.session_date);
    let _ = writeln!(out, "Global score **{}**, {}.\n", report.global_score, report.erl);
    let _ = writeln!(out, "| Block | Raw sum | Normalized |\n|---|---:|---:|");
    for b in &report.block_scores {
        let _ = writeln!(out, "| {} | {} | {} |", b.block_id, b.raw_sum, b.normalized);
    }
    let _ = writeln!(out, "\n### Contributions by impact\n");
    let _ = writeln!(out, "| Indicator | Question | Answer | Contribution |\n|---|---|---|---:|");
    for c in breakdown(report) {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            c.key,
            cell(question_text(catalog, &c.key)),
            verdict_word(&c),
            signed(c.contribution)
        );
    }
    followups(&mut out, catalog, session, report);
    out
}

pub fn timeline_markdown(record: Option<&UseCaseRecord>, timeline: &Timeline) -> String {
    let mut out = String::new();
    let title = record.map(|r| r.title.as_str()).filter(|t| !t.is_empty());
    let _ =
        writeln!(out, "# Use case {}{}\n", timeline.use_case_id, title.map(|t| format!(": {t}")).unwrap_or_default());
    if timeline.points.is_empty() {
        let _ = writeln!(out, "No sessions recorded.");
        return out;
    }
    let blocks: Vec<&str> = timeline.points[0].block_scores.iter().map(|b| b.block_id.as_str()).collect();
    let _ = write!(out, "| Session | Date | Status | Global | ERL |");
    for b in &blocks {
        let _ = write!(out, " {b} |");
    }
    let _ = write!(out, "\n|---|---|---|---:|---:|");
    for _ in &blocks {
        let _ = write!(out, "---:|");
    }
    out.push('\n');
    for p in &timeline.points {
        let status = if p.complete { "complete" } else { "draft" };
        let _ = write!(
            out,
            "| {} | {} | {status} | {} | {} |",
            p.session_id, p.session_date, p.global_score, p.erl_level.level
        );
        for b in &p.block_scores {
            let _ = write!(out, " {} |", b.normalized);
        }
        out.push('\n');
    }
    out
}

pub fn timeline_csv(timeline: &Timeline) -> String {
    let mut out = String::from("session_id,session_date,complete,global_score,erl_level\n");
    for p in &timeline.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.session_id, p.session_date, p.complete, p.global_score, p.erl_level.level
        );
    }
    out
}

pub fn diff_markdown(catalog: &Catalog, diff: &SessionDiff) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Comparison {} to {}\n", diff.from_id, diff.to_id);
    let _ = writeln!(
        out,
        "Global score {} to {} ({}), ERL {} to {}.\n",
        diff.old_global,
        diff.new_global,
        signed(diff.global_delta),
        diff.erl_change.old,
        diff.erl_change.new
    );
    let _ = writeln!(out, "## Blocks\n\n| Block | Before | After | Change |\n|---|---:|---:|---:|");
    for b in &diff.block_deltas {
        let _ = writeln!(out, "| {} | {} | {} | {} |", b.block_id, b.old, b.new, signed(b.delta));
    }
    let _ = writeln!(out, "\n## Changed answers\n");
    if diff.answer_changes.is_empty() {
        let _ = writeln!(out, "None.");
    } else {
        let _ = writeln!(out, "| Indicator | Question | Before | After |\n|---|---|---|---|");
        for a in &diff.answer_changes {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                a.key,
                cell(question_text(catalog, &a.key)),
                answer_word(a.old),
                answer_word(a.new)
            );
        }
    }
    if !diff.contribution_delta_by_indicator.is_empty() {
        let _ =
            writeln!(out, "\n## Contribution changes\n\n| Indicator | Before | After | Change |\n|---|---:|---:|---:|");
        for c in &diff.contribution_delta_by_indicator {
            let _ = writeln!(out, "| {} | {} | {} | {} |", c.key, c.old, c.new, signed(c.delta));
        }
    }
    out
}

pub fn diff_blocks_csv(diff: &SessionDiff) -> String {
    let mut out = String::from("block_id,old,new,delta\n");
    for b in &diff.block_deltas {
        let _ = writeln!(out, "{},{},{},{}", b.block_id, b.old, b.new, b.delta);
    }
    out
}

pub fn diff_answers_csv(diff: &SessionDiff) -> String {
    let mut out = String::from("indicator,old,new\n");
    let token = |v: Option<AnswerValue>| v.map_or("", AnswerValue::token);
    for a in &diff.answer_changes {
        let _ = writeln!(out, "{},{},{}", a.key, token(a.old), token(a.new));
    }
    out
}

pub fn diff_contributions_csv(diff: &SessionDiff) -> String {
    let mut out = String::from("indicator,old,new,delta\n");
    for c in &diff.contribution_delta_by_indicator {
        let _ = writeln!(out, "{},{},{},{}", c.key, c.old, c.new, c.delta);
    }
    out
}
