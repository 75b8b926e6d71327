use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use glsim::lexicon::{load_annotations, load_lexicon, read_mentions_jsonl, write_mentions_jsonl};
use glsim::scoring::write_records_jsonl;
use glsim::{
    evaluate, extract_mentions, label_mentions, read_bundle, score_all, Method, ScoringConfig,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/replay")
        .join(name)
}

#[test]
fn committed_bundle_reproduces_expected_scores_and_report() {
    let bundle = read_bundle(&fixture("bundle")).unwrap();
    let mentions = read_mentions_jsonl(BufReader::new(
        fs::File::open(fixture("mentions.jsonl")).unwrap(),
    ))
    .unwrap();
    let cfg: ScoringConfig =
        serde_json::from_str(&fs::read_to_string(fixture("scoring_config.json")).unwrap()).unwrap();

    let batch = score_all::<f64>(&bundle, &mentions, &cfg, &Method::ALL);
    assert!(batch.failures.is_empty());
    let mut scores = Vec::new();
    write_records_jsonl(&mut scores, &batch.records).unwrap();
    assert_eq!(
        String::from_utf8(scores).unwrap(),
        fs::read_to_string(fixture("expected_scores.jsonl")).unwrap()
    );

    let report = evaluate(&batch.records, true);
    let json = serde_json::to_string_pretty(&report).unwrap() + "\n";
    assert_eq!(
        json,
        fs::read_to_string(fixture("expected_report.json")).unwrap()
    );
}

#[test]
fn committed_mentions_match_fresh_extraction() {
    let dir = fixture("bundle");
    let bundle = read_bundle(&dir).unwrap();
    let lex = load_lexicon(&dir.join("lexicon.json")).unwrap();
    let annotations =
        load_annotations(&dir.join(bundle.annotations_ref.as_deref().unwrap()), &lex).unwrap();
    let mut fresh = Vec::new();
    for s in &bundle.samples {
        let found = extract_mentions(s, &lex).unwrap();
        fresh.extend(label_mentions(&found, &annotations, &s.image_id).unwrap());
    }
    let mut bytes = Vec::new();
    write_mentions_jsonl(&mut bytes, &fresh).unwrap();
    assert_eq!(
        String::from_utf8(bytes).unwrap(),
        fs::read_to_string(fixture("mentions.jsonl")).unwrap()
    );
}
