//! Engine configuration, loaded from a JSON file.

use std::path::{Path, PathBuf};

use clarify_core::bilstm::{BiLstmHyper, DEFAULT_NEG_RATIO};
use clarify_core::corpus::{DEFAULT_EMBEDDING_DIM, DEFAULT_POOL_CAP};
use clarify_core::dict_filter::LogRegHyper;
use clarify_core::gmm::GmmConfig;
use clarify_core::selection::DEFAULT_K;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_IBM1_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub embeddings: PathBuf,
    pub corpus: PathBuf,
    pub confusion_sets: PathBuf,
    #[serde(default)]
    pub parallel: Option<PathBuf>,
    /// Dictionary-style sentences, one per line, for the filter.
    #[serde(default)]
    pub filter_positives: Option<PathBuf>,
    pub model_store: PathBuf,
    pub event_log: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L1Mode {
    #[default]
    Original,
    L1Grouped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub paths: Paths,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_pool_cap")]
    pub pool_cap: usize,
    #[serde(default = "default_neg_ratio")]
    pub neg_ratio: usize,
    #[serde(default)]
    pub gmm: GmmConfig,
    #[serde(default)]
    pub bilstm: BiLstmHyper,
    #[serde(default)]
    pub filter: LogRegHyper,
    #[serde(default = "default_ibm1_iterations")]
    pub ibm1_iterations: usize,
    /// Seed for every trainer and sampler; overrides the nested seeds.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub l1_mode: L1Mode,
}

fn default_dim() -> usize {
    DEFAULT_EMBEDDING_DIM
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_pool_cap() -> usize {
    DEFAULT_POOL_CAP
}

fn default_neg_ratio() -> usize {
    DEFAULT_NEG_RATIO
}

fn default_ibm1_iterations() -> usize {
    DEFAULT_IBM1_ITERATIONS
}

impl EngineConfig {
    /// Configuration with every default and the given paths.
    pub fn with_paths(paths: Paths) -> Self {
        Self {
            paths,
            embedding_dim: default_dim(),
            k: default_k(),
            pool_cap: default_pool_cap(),
            neg_ratio: default_neg_ratio(),
            gmm: GmmConfig::default(),
            bilstm: BiLstmHyper::default(),
            filter: LogRegHyper::default(),
            ibm1_iterations: default_ibm1_iterations(),
            seed: 0,
            l1_mode: L1Mode::default(),
        }
    }

    /// Parses the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config: EngineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.embeddings,
            &mut p.corpus,
            &mut p.confusion_sets,
            &mut p.model_store,
            &mut p.event_log,
        ] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        for path in [&mut p.parallel, &mut p.filter_positives].into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.embedding_dim == 0 || self.pool_cap == 0 || self.neg_ratio == 0 {
            return Err(Error::Config(
                "embedding_dim, pool_cap and neg_ratio must be positive".into(),
            ));
        }
        let p = &self.paths;
        let inputs = [Some(&p.embeddings), Some(&p.corpus), Some(&p.confusion_sets)];
        for path in inputs
            .into_iter()
            .chain([p.parallel.as_ref(), p.filter_positives.as_ref()])
            .flatten()
        {
            if !path.is_file() {
                return Err(Error::Config(format!("missing input file {}", path.display())));
            }
        }
        Ok(())
    }

    pub fn gmm_config(&self) -> GmmConfig {
        GmmConfig {
            seed: self.seed,
            ..self.gmm
        }
    }

    pub fn bilstm_hyper(&self) -> BiLstmHyper {
        BiLstmHyper {
            seed: self.seed,
            ..self.bilstm
        }
    }

    pub fn filter_hyper(&self) -> LogRegHyper {
        LogRegHyper {
            seed: self.seed,
            ..self.filter
        }
    }

    /// SHA-256 of the canonical JSON of everything that shapes a model or a
    /// suggestion. Output locations are excluded.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let paths = value["paths"].as_object_mut().expect("paths object");
        paths.remove("model_store");
        paths.remove("event_log");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
