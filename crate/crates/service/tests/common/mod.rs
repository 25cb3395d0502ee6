#![allow(dead_code)]

use std::path::Path;

use clarify_service::config::{EngineConfig, Paths};
use clarify_service::Engine;
use clarify_testkit::{write_pipeline, PipelineFiles};

/// Default configuration over the synthetic pipeline data, with the model
/// store and event log under `out`.
pub fn config(files: &PipelineFiles, out: &Path) -> EngineConfig {
    let mut config = EngineConfig::with_paths(Paths {
        embeddings: files.embeddings.clone(),
        corpus: files.corpus.clone(),
        confusion_sets: files.sets.clone(),
        parallel: Some(files.parallel.clone()),
        filter_positives: Some(files.filter_positives.clone()),
        model_store: out.join("models"),
        event_log: out.join("events.jsonl"),
    });
    config.embedding_dim = files.dim;
    config.bilstm.epochs = 5;
    config
}

pub fn write_config(config: &EngineConfig, path: &Path) {
    std::fs::write(path, serde_json::to_string_pretty(config).unwrap()).unwrap();
}

pub fn train_all(engine: &Engine) {
    engine.train_filter().unwrap();
    engine.train_align().unwrap();
    engine.train_gmm().unwrap();
    engine.train_bilstm().unwrap();
}

/// Data and a fully trained engine rooted in `dir`.
pub fn trained_engine(dir: &Path, seed: u64) -> Engine {
    let files = write_pipeline(&dir.join("data"), seed);
    let engine = Engine::load(config(&files, dir)).unwrap();
    train_all(&engine);
    engine
}
