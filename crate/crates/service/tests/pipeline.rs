mod common;

use std::fs;
use std::path::Path;

use clarify_core::alignment::read_parallel;
use clarify_core::selection::ModelKind;
use clarify_service::{Engine, SuggestRequest};
use clarify_testkit::{tree_files, write_pipeline, PipelineFiles};

fn request(set: &str, model: ModelKind, l1_grouped: bool) -> SuggestRequest {
    SuggestRequest {
        set: set.into(),
        model,
        k: None,
        l1_grouped: Some(l1_grouped),
    }
}

fn run(files: &PipelineFiles, out: &Path) -> (Engine, Vec<String>) {
    let engine = Engine::load(common::config(files, out)).unwrap();
    common::train_all(&engine);
    let mut outputs = Vec::new();
    for set in ["refuse_reject", "hard_difficult"] {
        for model in [ModelKind::Gmm, ModelKind::Bilstm, ModelKind::Baseline] {
            for l1 in [false, true] {
                let result = engine.suggest(&request(set, model, l1)).unwrap();
                outputs.push(serde_json::to_string(&result).unwrap());
            }
        }
    }
    (engine, outputs)
}

#[test]
fn replay_is_byte_identical() {
    let data = tempfile::tempdir().unwrap();
    let files = write_pipeline(data.path(), 21);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (first, out_a) = run(&files, a.path());
    let (second, out_b) = run(&files, b.path());
    assert_eq!(first.digest(), second.digest());
    assert_ne!(first.store().root(), second.store().root());
    let files = tree_files(first.store().root());
    assert_eq!(files, tree_files(second.store().root()));
    assert_eq!(files.len(), 2 + 2 * 4);
    for f in &files {
        let x = fs::read(first.store().root().join(f)).unwrap();
        let y = fs::read(second.store().root().join(f)).unwrap();
        assert!(x == y, "{} differs", f.display());
    }
    assert_eq!(out_a, out_b);
}

#[test]
fn changing_the_seed_changes_the_digest_and_models() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_pipeline(&dir.path().join("data"), 21);
    let base = common::config(&files, dir.path());
    let mut reseeded = base.clone();
    reseeded.seed = 1;
    assert_ne!(base.digest(), reseeded.digest());
    let engine = Engine::load(reseeded).unwrap();
    engine.train_gmm().unwrap();
    assert!(engine.store().gmm_path("refuse").is_file());
    assert!(!Engine::load(base).unwrap().store().gmm_path("refuse").exists());
}

#[test]
fn l1_grouped_suggestions_share_a_translation() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::trained_engine(dir.path(), 8);
    let pairs = read_parallel(std::io::BufReader::new(
        fs::File::open(dir.path().join("data/parallel.jsonl")).unwrap(),
    ))
    .unwrap();

    let shared = engine.suggest(&request("refuse_reject", ModelKind::Gmm, true)).unwrap();
    assert!(shared.l1_restricted);
    for word in &shared.per_word {
        assert!(!word.examples.is_empty(), "{}", word.lemma);
        for e in &word.examples {
            let index: usize = e.id.trim_start_matches('p').parse().unwrap();
            assert!(
                pairs[index].l1.iter().any(|t| t == "G_REF"),
                "{} {:?}",
                e.id,
                pairs[index]
            );
        }
    }

    let disjoint = engine
        .suggest(&request("hard_difficult", ModelKind::Gmm, true))
        .unwrap();
    assert!(!disjoint.l1_restricted);
    assert!(disjoint.per_word.iter().all(|w| !w.examples.is_empty()));

    let original = engine
        .suggest(&request("refuse_reject", ModelKind::Gmm, false))
        .unwrap();
    assert!(!original.l1_restricted);
    assert!(original
        .per_word
        .iter()
        .flat_map(|w| &w.examples)
        .all(|e| e.id.starts_with('c')));
}

#[test]
fn suggestion_json_shape() {
    let dir = tempfile::tempdir().unwrap();
    let engine = common::trained_engine(dir.path(), 9);
    let result = engine
        .suggest(&request("hard_difficult", ModelKind::Bilstm, false))
        .unwrap();
    let value = serde_json::to_value(&result).unwrap();
    let keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        ["config_digest", "k", "l1_restricted", "model_kind", "per_word", "set"]
    );
    let example = &value["per_word"][0]["examples"][0];
    for key in ["id", "text", "score", "fitness", "closeness"] {
        assert!(example.get(key).is_some(), "{key}");
    }
    assert_eq!(result.config_digest, engine.digest());
}
