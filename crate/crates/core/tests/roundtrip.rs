//! Event-log replay and catalog format round trips.

mod support;

use chrono::{Duration, NaiveDate};
use erl_core::catalog::{
    convert_published, parse_block, parse_catalog, serialize_block, serialize_catalog, Block, BlockSource, Layer,
};
use erl_core::traversal::{events_from_ndjson, events_to_ndjson, EventBody, SessionEvent, TraversalError};
use erl_core::{AnswerValue, Catalog, Indicator, Question, Session};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

/// Seeded run mixing answers, comments and revisions, with a ticking clock.
fn eventful_run(catalog: &Catalog, seed: u64) -> Session {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = catalog.blocks().iter().map(|b| b.block_id.clone()).collect();
    let mut clock = ts(3);
    let mut tick = || {
        clock += Duration::seconds(17);
        clock
    };
    let mut session =
        Session::start(catalog, blocks, metadata("uc-replay", NaiveDate::from_ymd_opt(2025, 2, 1).unwrap()), tick())
            .unwrap();
    for step in 0..catalog.indicator_count() * 2 {
        if rng.gen_bool(0.2) && !session.answers.is_empty() && !session.is_complete() {
            let key = session.answers[rng.gen_range(0..session.answers.len())].key.clone();
            let value = if rng.gen_bool(0.5) { AnswerValue::YES } else { AnswerValue::UNSURE };
            session.revise_answer(catalog, &key, value, Some(format!("revised at step {step}")), tick()).unwrap();
            continue;
        }
        let Question::Ask(key) = session.current_question(catalog) else { break };
        let value = [AnswerValue::YES, AnswerValue::NO, AnswerValue::UNSURE][rng.gen_range(0..3)];
        let comment = rng.gen_bool(0.3).then(|| format!("note, \"quoted\"\nline {step}"));
        session.submit_answer(catalog, &key, value, comment, tick()).unwrap();
    }
    session
}

#[test]
fn replay_reproduces_identical_state() {
    for seed in 0..300 {
        let catalog = random_catalog(seed, 15);
        let session = eventful_run(&catalog, seed);
        let log = session.to_ndjson();
        let events = events_from_ndjson(&log).unwrap();
        let replayed = Session::replay(&catalog, &events).unwrap();
        assert_eq!(replayed, session, "seed {seed}");
        assert_eq!(replayed.to_ndjson(), log, "seed {seed}");
        assert_eq!(serde_json::to_string(&replayed).unwrap(), serde_json::to_string(&session).unwrap());
        assert_eq!(events_to_ndjson(replayed.events()), log);
    }
}

#[test]
fn replay_of_every_prefix_is_consistent() {
    let catalog = fixture_catalog("security");
    let session = eventful_run(&catalog, 7);
    let events = session.events();
    for n in 1..=events.len() {
        // A complete event is written together with the answer that closes
        // the session, so no committed log ends just before one.
        if events.get(n).is_some_and(|e| matches!(e.body, EventBody::Complete(_))) {
            continue;
        }
        let partial = Session::replay(&catalog, &events[..n]).unwrap();
        assert_eq!(partial.events(), &events[..n]);
    }
}

#[test]
fn replay_rejects_tampering() {
    let catalog = fixture_catalog("security");
    let session = eventful_run(&catalog, 11);
    let events: Vec<SessionEvent> = session.events().to_vec();

    let mut gap = events.clone();
    gap.remove(1);
    assert!(Session::replay(&catalog, &gap).is_err());

    let log = session.to_ndjson();
    let mut lines: Vec<&str> = log.lines().collect();
    lines.swap(1, 2);
    assert!(matches!(events_from_ndjson(&lines.join("\n")), Err(TraversalError::Replay { .. })));

    let forged = log.replacen("\"seq\":2", "\"seq\":3", 1);
    assert!(events_from_ndjson(&forged).is_err());
}

fn decorated(catalog: &Catalog, seed: u64) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = catalog
        .blocks()
        .iter()
        .map(|b| {
            let layered = rng.gen_bool(0.5);
            let indicators: Vec<Indicator> = b
                .indicators()
                .map(|i| {
                    let text = match rng.gen_range(0..4) {
                        0 => format!("{}, with a comma", i.text),
                        1 => format!("Is the \"{}\" quoted?", i.id),
                        2 => format!("Ünïcode – {}", i.text),
                        _ => i.text.clone(),
                    };
                    let layer = if layered {
                        [Layer::Relevance, Layer::Mitigation, Layer::Validation, Layer::Other][rng.gen_range(0..4)]
                    } else {
                        Layer::Other
                    };
                    Indicator::new(i.id.clone(), text, i.yes_score, i.no_score).with_layer(layer)
                })
                .collect();
            Block::new(&b.block_id, &b.title, indicators).unwrap()
        })
        .collect();
    let reference = catalog.reference();
    Catalog::new(reference.catalog_id, reference.version, blocks).unwrap()
}

#[test]
fn catalog_parse_serialize_identity() {
    for seed in 0..100 {
        let catalog = decorated(&random_catalog(seed, 15), seed);
        let sources: Vec<BlockSource> = serialize_catalog(&catalog)
            .into_iter()
            .map(|(id, text)| {
                let title = catalog.block(&id).unwrap().title.clone();
                BlockSource::new(id, title, text)
            })
            .collect();
        let reference = catalog.reference();
        let parsed = parse_catalog(&sources, &reference.catalog_id, &reference.version).unwrap();
        assert_eq!(parsed, catalog, "seed {seed}");
        let again: Vec<String> = serialize_catalog(&parsed).into_iter().map(|(_, t)| t).collect();
        let first: Vec<String> = sources.into_iter().map(|s| s.text).collect();
        assert_eq!(again, first, "seed {seed}");
    }
}

#[test]
fn published_table_converts_to_canonical_block() {
    let published = std::fs::read_to_string(fixtures().join("published/security.tsv")).unwrap();
    let canonical = std::fs::read_to_string(fixtures().join("security/security.csv")).unwrap();
    let converted = convert_published(&published).unwrap();
    assert_eq!(converted, canonical);

    let block = parse_block(&BlockSource::new("security", "Security", converted.clone())).unwrap();
    assert_eq!(block.len(), 10);
    assert_eq!(serialize_block(&block), converted);
    assert_eq!(block, fixture_catalog("security").block("security").unwrap().clone());
}
