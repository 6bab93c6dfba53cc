//! Shared test helpers: fixture loading, random catalogs, and brute-force
//! oracles that do not go through the traversal engine.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use erl_core::catalog::{load_catalog, Block, Catalog, Indicator, IndicatorId};
use erl_core::script::{apply_answers, parse_answers};
use erl_core::{AnswerKey, AnswerValue, Question, Score, Session, SessionMetadata, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures"))
}

pub fn fixture_catalog(name: &str) -> Catalog {
    load_catalog(&fixtures().join(name).join("catalog.json")).expect("fixture catalog loads")
}

pub fn sc(thousandths: i64) -> Score {
    Score::from_thousandths(thousandths)
}

pub fn ts(day: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, day, 9, 0, 0).unwrap()
}

pub fn metadata(use_case: &str, date: NaiveDate) -> SessionMetadata {
    SessionMetadata::new(use_case, date)
}

/// Runs an answers file from the fixtures directory.
pub fn scripted_session(
    catalog: &Catalog,
    blocks: &[&str],
    use_case: &str,
    date: NaiveDate,
    answers_file: &str,
) -> Session {
    let text = std::fs::read_to_string(fixtures().join(answers_file)).expect("answers fixture");
    let rows = parse_answers(&text).expect("answers parse");
    let start = Utc.from_utc_datetime(&date.and_hms_opt(9, 0, 0).unwrap());
    let mut session =
        Session::start(catalog, blocks.iter().map(|b| b.to_string()).collect(), metadata(use_case, date), start)
            .expect("session starts");
    apply_answers(catalog, &mut session, &rows, || start).expect("answers apply");
    session
}

/// Drives a session with a list of verdicts for whatever question comes next.
pub fn drive(catalog: &Catalog, session: &mut Session, answers: &[AnswerValue]) -> Vec<AnswerKey> {
    let mut asked = Vec::new();
    for value in answers {
        let Question::Ask(key) = session.current_question(catalog) else { break };
        session.submit_answer(catalog, &key, *value, None, ts(1)).expect("current question accepted");
        asked.push(key);
    }
    asked
}

/// Random forest catalog with at most `max_indicators` indicators over 1..=3 blocks.
pub fn random_catalog(seed: u64, max_indicators: usize) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.gen_range(1..=max_indicators);
    let block_count = rng.gen_range(1..=total.min(3));
    let mut sizes = vec![1usize; block_count];
    for _ in block_count..total {
        let i = rng.gen_range(0..block_count);
        sizes[i] += 1;
    }
    let blocks = sizes
        .iter()
        .enumerate()
        .map(|(b, &size)| {
            let mut ids: Vec<Vec<u32>> = Vec::new();
            let mut child_counts: Vec<u32> = Vec::new();
            let mut roots = 0u32;
            for i in 0..size {
                // Parent index 0 means a new root; otherwise attach to node k-1.
                let k = rng.gen_range(0..=i);
                let id = if k == 0 {
                    roots += 1;
                    vec![roots]
                } else {
                    child_counts[k - 1] += 1;
                    let mut id = ids[k - 1].clone();
                    id.push(child_counts[k - 1]);
                    id
                };
                ids.push(id);
                child_counts.push(0);
            }
            let indicators = ids.into_iter().map(|segments| {
                let weight = |rng: &mut ChaCha8Rng| {
                    if rng.gen_bool(0.3) {
                        Score::ZERO
                    } else {
                        sc(rng.gen_range(-100..=100) * 10)
                    }
                };
                let id = IndicatorId::new(segments).unwrap();
                let text = format!("Question {id}?");
                Indicator::new(id, text, weight(&mut rng), weight(&mut rng))
            });
            Block::new(format!("b{b}"), format!("Block {b}"), indicators).expect("generated block is valid")
        })
        .collect();
    Catalog::new(format!("random-{seed}"), "1", blocks).unwrap()
}

pub type AnswerMap = BTreeMap<AnswerKey, Verdict>;

/// Every gate-valid complete answer map, by enumerating all yes/no
/// assignments of every indicator and keeping the reachable part.
pub fn brute_force_maps(catalog: &Catalog, blocks: &[String]) -> BTreeSet<AnswerMap> {
    let mut result: BTreeSet<AnswerMap> = [AnswerMap::new()].into_iter().collect();
    for block_id in blocks {
        let block = catalog.block(block_id).unwrap();
        let ids: Vec<&IndicatorId> = block.ids().collect();
        let n = ids.len();
        let mut per_block: BTreeSet<AnswerMap> = BTreeSet::new();
        for mask in 0u32..(1 << n) {
            let verdict_of = |segments: &[u32]| -> Option<bool> {
                ids.iter().position(|id| id.segments() == segments).map(|i| mask & (1 << i) != 0)
            };
            let mut map = AnswerMap::new();
            for (i, id) in ids.iter().enumerate() {
                let segs = id.segments();
                let reachable = (1..segs.len()).all(|len| verdict_of(&segs[..len]) == Some(true));
                if reachable {
                    let v = if mask & (1 << i) != 0 { Verdict::Yes } else { Verdict::No };
                    map.insert(AnswerKey::new(block_id, (*id).clone()), v);
                }
            }
            per_block.insert(map);
        }
        result = result
            .iter()
            .flat_map(|prefix| {
                per_block.iter().map(move |m| {
                    let mut merged = prefix.clone();
                    merged.extend(m.iter().map(|(k, v)| (k.clone(), *v)));
                    merged
                })
            })
            .collect();
    }
    result
}

/// Every complete session reachable by driving the engine down each branch.
pub fn engine_sessions(catalog: &Catalog, session: Session) -> Vec<Session> {
    let mut out = Vec::new();
    let mut stack = vec![session];
    while let Some(s) = stack.pop() {
        match s.current_question(catalog) {
            Question::Done => out.push(s),
            Question::Ask(key) => {
                for v in [AnswerValue::YES, AnswerValue::NO] {
                    let mut next = s.clone();
                    next.submit_answer(catalog, &key, v, None, ts(1)).expect("engine accepts its own question");
                    stack.push(next);
                }
            }
        }
    }
    out
}

pub fn answer_map(session: &Session) -> AnswerMap {
    session.answers.iter().map(|r| (r.key.clone(), r.value.verdict)).collect()
}

/// Complete answer maps reachable through the engine.
pub fn engine_maps(catalog: &Catalog, session: Session) -> BTreeSet<AnswerMap> {
    engine_sessions(catalog, session).iter().map(answer_map).collect()
}

/// Baseline plus the plain sum of weights in an answer map.
pub fn oracle_score(catalog: &Catalog, map: &AnswerMap, baseline: Score) -> Score {
    let mut total = baseline;
    for (key, verdict) in map {
        let indicator = catalog.block(&key.block_id).unwrap().get(&key.indicator).unwrap();
        total += match verdict {
            Verdict::Yes => indicator.yes_score,
            Verdict::No => indicator.no_score,
        };
    }
    total
}

/// Strict descendants of `root` found by scanning id prefixes.
fn descendants_by_prefix<'a>(block: &'a Block, root: &IndicatorId) -> Vec<&'a Indicator> {
    let r = root.segments();
    block.indicators().filter(|i| i.id.segments().len() > r.len() && i.id.segments().starts_with(r)).collect()
}

/// Independent recursive maximum over `root`'s strict descendants.
pub fn recursive_best(block: &Block, root: &IndicatorId) -> Score {
    let r = root.segments();
    descendants_by_prefix(block, root)
        .into_iter()
        .filter(|i| i.id.segments().len() == r.len() + 1)
        .map(|child| {
            let yes = child.yes_score + recursive_best(block, &child.id);
            yes.max(child.no_score)
        })
        .sum()
}

/// Maximum over enumerated gate-valid assignments of `root`'s descendants.
pub fn enumerated_best(block: &Block, root: &IndicatorId) -> Score {
    let desc = descendants_by_prefix(block, root);
    let n = desc.len();
    assert!(n <= 20, "oracle bound");
    let r = root.segments().len();
    (0u32..(1 << n))
        .map(|mask| {
            let yes = |segments: &[u32]| {
                desc.iter().position(|d| d.id.segments() == segments).is_some_and(|i| mask & (1 << i) != 0)
            };
            desc.iter()
                .enumerate()
                .filter(|(_, d)| {
                    let s = d.id.segments();
                    (r + 1..s.len()).all(|len| yes(&s[..len]))
                })
                .map(|(i, d)| if mask & (1 << i) != 0 { d.yes_score } else { d.no_score })
                .sum::<Score>()
        })
        .max()
        .unwrap_or(Score::ZERO)
}
