//! On-disk model files under `{model_store}/{config digest}/`.
//!
//! Layout: `gmm/{lemma}.json`, `bilstm/{lemma}.json`, `filter.json`,
//! `align.json`. Files are written to a temporary name and renamed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ModelStore {
    root: PathBuf,
}

impl ModelStore {
    pub fn new(model_store: &Path, digest: &str) -> Self {
        Self {
            root: model_store.join(digest),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn gmm_path(&self, lemma: &str) -> PathBuf {
        self.root.join("gmm").join(format!("{lemma}.json"))
    }

    pub fn bilstm_path(&self, lemma: &str) -> PathBuf {
        self.root.join("bilstm").join(format!("{lemma}.json"))
    }

    pub fn filter_path(&self) -> PathBuf {
        self.root.join("filter.json")
    }

    pub fn align_path(&self) -> PathBuf {
        self.root.join("align.json")
    }

    pub fn save<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        let dir = path.parent().unwrap_or(&self.root);
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes).map_err(Error::io(&tmp))?;
        fs::rename(&tmp, path).map_err(Error::io(path))
    }

    /// `Ok(None)` when the file does not exist.
    pub fn load<T: DeserializeOwned>(&self, path: &Path) -> Result<Option<T>> {
        match fs::read(path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path)(e)),
        }
    }
}
